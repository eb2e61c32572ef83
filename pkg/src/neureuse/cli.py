"""Command-line experiment driver.

Subcommands::

    neureuse evolve     --config run.toml --out runs/ [--runs 10] [--seed 3]
    neureuse evaluate   genome.json --task pole --out traj/
    neureuse cross-eval runs/ --trained pole --out table.csv [--random 100]
    neureuse analyze    genome.json --mode attractors --out analysis/

Every artifact embeds the configuration hash and seed. Set
``NEUREUSE_THREADS`` to evaluate genotypes in parallel.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import dynamics as dyn
from .ctrnn import DecodeError, decode_genotype, load_genome, save_genome
from .embodiment import (
    PhysicsConfig,
    Task,
    TaskFamily,
    default_trials,
    read_trajectory_csv,
    run_trial,
    write_trajectory_csv,
)
from .evolution import (
    EvoConfig,
    Paradigm,
    cross_evaluate,
    derive_seed,
    evolve,
    random_agent_fitness,
)

log = logging.getLogger("neureuse")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Everything a command needs, loadable from one TOML or JSON file."""

    evolution: EvoConfig = field(default_factory=EvoConfig)
    analysis: dyn.AnalysisConfig = field(default_factory=dyn.AnalysisConfig)
    n_runs: int = 1
    snapshot_every: int = 100

    @property
    def physics(self) -> PhysicsConfig:
        return self.evolution.physics

    def to_dict(self) -> dict:
        return {
            "evolution": self.evolution.to_dict(),
            "analysis": asdict(self.analysis),
            "n_runs": self.n_runs,
            "snapshot_every": self.snapshot_every,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        evo = dict(d.pop("evolution", {}))
        if "physics" in d:
            evo["physics"] = d.pop("physics")
        analysis = d.pop("analysis", {})
        extra = set(d) - {"n_runs", "snapshot_every"}
        unknown_evo = set(evo) - {f.name for f in fields(EvoConfig)}
        unknown_an = set(analysis) - {f.name for f in fields(dyn.AnalysisConfig)}
        if extra or unknown_evo or unknown_an:
            raise ConfigError(f"unknown config keys: {sorted(extra | unknown_evo | unknown_an)}")
        try:
            return cls(EvoConfig(**evo), dyn.AnalysisConfig(**analysis),
                       int(d.get("n_runs", 1)), int(d.get("snapshot_every", 100)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path: Optional[str]) -> ExperimentConfig:
    """Read a ``.toml`` or ``.json`` config; ``None`` gives the defaults."""
    if path is None:
        return ExperimentConfig()
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        doc = tomllib.loads(text) if p.suffix == ".toml" else json.loads(text)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse {p.name}: {exc}") from exc
    return ExperimentConfig.from_dict(doc)


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


# --- evolve ----------------------------------------------------------------

def run_one(cfg: ExperimentConfig, evo: EvoConfig, out: Path, threads: Optional[int]) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    snaps = out / "snapshots"
    snaps.mkdir(exist_ok=True)
    provenance = {"config_hash": cfg.config_hash(), "run_hash": evo.config_hash(),
                  "seed": evo.seed}
    _write_json(out / "config.json", {"experiment": cfg.to_dict(), "run": evo.to_dict(),
                                      **provenance})

    def snapshot(line):
        gen = line["generation"]
        if cfg.snapshot_every > 0 and gen % cfg.snapshot_every == 0:
            save_genome(snaps / f"gen{gen:05d}.json", line["best_genes"], evo.n_inter,
                        generation=gen, fitness=line["best"], **provenance)

    record = evolve(evo, workers=threads, on_generation=snapshot)
    record.write_jsonl(out / "run.jsonl")
    last = record.generations[-1]
    save_genome(out / "best_genome.json", last["best_genes"], evo.n_inter,
                generation=last["generation"], fitness=last["best"],
                task_fitness=last["best_task_fitness"], **provenance)
    summary = {
        **provenance,
        "paradigm": evo.paradigm.value,
        "generations_run": len(record.generations),
        "best_fitness": last["best"],
        "best_task_fitness": last["best_task_fitness"],
        "best_curve": [g["best"] for g in record.generations],
    }
    _write_json(out / "summary.json", summary)
    return summary


def cmd_evolve(args, cfg: ExperimentConfig) -> int:
    evo = cfg.evolution
    overrides = {k: v for k, v in (("seed", args.seed), ("generations", args.generations),
                                   ("paradigm", args.paradigm)) if v is not None}
    if overrides:
        evo = EvoConfig.from_dict({**evo.to_dict(), **overrides})
        cfg = ExperimentConfig(evo, cfg.analysis, cfg.n_runs, cfg.snapshot_every)
    n_runs = args.runs if args.runs is not None else cfg.n_runs
    out = Path(args.out)
    if n_runs == 1:
        s = run_one(cfg, evo, out, args.threads)
        print(f"seed {s['seed']}: best {s['best_fitness']:.4f} -> {out}")
        return 0
    rows = []
    for i in range(n_runs):
        run_evo = EvoConfig.from_dict({**evo.to_dict(), "seed": derive_seed(evo.seed, i)})
        s = run_one(cfg, run_evo, out / f"run{i:03d}", args.threads)
        rows.append({"run": i, "seed": s["seed"], "best_fitness": s["best_fitness"]})
        print(f"run {i} seed {s['seed']}: best {s['best_fitness']:.4f}")
    _write_json(out / "batch.json", {"master_seed": evo.seed, "config_hash": cfg.config_hash(),
                                     "runs": rows})
    return 0


# --- evaluate -------------------------------------------------------------

def _load_params(path, expect_n: Optional[int] = None):
    genes, n = load_genome(path)
    if expect_n is not None and n != expect_n:
        raise DecodeError(f"genome has N={n} but the config expects N={expect_n}")
    return genes, n, decode_genotype(genes, n)


def cmd_evaluate(args, cfg: ExperimentConfig) -> int:
    _, n, params = _load_params(args.genome, args.n_inter)
    family = TaskFamily(args.task)
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    meta = {"genome": str(args.genome), "config_hash": cfg.config_hash()}
    rows = []
    for k, spec in enumerate(default_trials(family)):
        r = run_trial(params, spec, cfg.physics, record=out is not None)
        rows.append({"trial": k, "task": spec.task.value, "offset": spec.offset,
                     "angle": spec.angle, "angvel": spec.angvel, "score": r.score,
                     "termination": r.termination})
        print(f"{k:2d} {spec.task.value:6s} offset={spec.offset:+8.3f} "
              f"angle={spec.angle:+.4f} angvel={spec.angvel:+.2f} "
              f"score={r.score:.4f} {r.termination}")
        if out:
            write_trajectory_csv(r, out / f"trial{k:02d}_{spec.task.value}.csv",
                                 {**meta, "trial": k})
    fitness = float(np.mean([r["score"] for r in rows]))
    print(f"{family.value} fitness {fitness:.4f}")
    if out:
        _write_json(out / "report.json", {**meta, "task": family.value, "n_inter": n,
                                          "fitness": fitness, "trials": rows})
    return 0


# --- cross-eval ------------------------------------------------------------

def _genome_paths(targets) -> list[Path]:
    paths = []
    for t in map(Path, targets):
        if t.is_dir():
            found = sorted(t.glob("**/best_genome.json"))
            if not found:
                raise ConfigError(f"no best_genome.json under {t}")
            paths += found
        else:
            paths.append(t)
    return paths


def cmd_cross_eval(args, cfg: ExperimentConfig) -> int:
    trained = TaskFamily(args.trained)
    other = TaskFamily.POLE if trained is TaskFamily.CATEGORIZATION else TaskFamily.CATEGORIZATION
    rows = []
    for path in _genome_paths(args.targets):
        genes, n = load_genome(path)
        a, b = cross_evaluate(genes, n, trained, other, cfg.physics)
        rows.append({"source": str(path), "kind": "evolved", trained.value: a, other.value: b})
    if args.random:
        fit = random_agent_fitness(args.random, cfg.evolution.n_inter, args.seed, cfg.physics)
        for i, (c, p) in enumerate(fit):
            rows.append({"source": f"random[{args.seed},{i}]", "kind": "random",
                         "categorization": float(c), "pole": float(p)})
    for r in rows:
        print(f"{r['kind']:8s} categorization={r['categorization']:.4f} "
              f"pole={r['pole']:.4f} {r['source']}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with out.open("w", newline="") as fh:
            w = csv.DictWriter(fh, ["source", "kind", "categorization", "pole"],
                               extrasaction="ignore")
            w.writeheader()
            w.writerows(rows)
        _write_json(out.with_suffix(".json"), {"config_hash": cfg.config_hash(),
                                               "trained": trained.value,
                                               "random_seed": args.seed,
                                               "n_random": args.random or 0})
    return 0


# --- analyze ---------------------------------------------------------------

def _trajectories(params, args, cfg: ExperimentConfig):
    """Recorded trials grouped by behaviour, from CSVs or fresh simulation."""
    groups: dict = {}
    if args.trajectories:
        results = [read_trajectory_csv(p) for p in sorted(Path(args.trajectories).glob("*.csv"))]
    else:
        results = [run_trial(params, s, cfg.physics)
                   for fam in TaskFamily for s in default_trials(fam)]
    for r in results:
        groups.setdefault(dyn.BEHAVIOR_OF_TASK[r.spec.task], []).append(r)
    return groups


def cmd_analyze(args, cfg: ExperimentConfig) -> int:
    _, n, params = _load_params(args.genome)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    acfg = cfg.analysis
    meta = {"genome": str(args.genome), "config_hash": cfg.config_hash(), "mode": args.mode}

    if args.mode == "attractors":
        sets = []
        for behavior, trajs in _trajectories(params, args, cfg).items():
            s = dyn.build_attractor_set(params, behavior, trajs, acfg)
            s.write_json(out / f"attractors_{behavior}.json", **meta)
            sets.append(s)
            print(f"{behavior}: {len(s)} attractors {sorted(s.kinds())}"
                  + (f", {s.n_nonconverged} not converged" if s.n_nonconverged else ""))
        comparisons = {}
        for i, a in enumerate(sets):
            for b in sets[i + 1:]:
                c = dyn.compare_attractor_sets(a, b, acfg.eps_loc)
                comparisons[f"{a.behavior}|{b.behavior}"] = c.counts
                print(f"{a.behavior} vs {b.behavior}: {c.counts}")
        dyn.write_overlap_csv(out / "overlap.csv", sets, acfg.eps_loc)
        _write_json(out / "comparison.json", {**meta, "comparisons": comparisons})

    elif args.mode == "basins":
        inputs = np.zeros(7) if args.inputs is None else np.asarray(args.inputs, float)
        cond = dyn.InputCondition("clamped", inputs)
        grid = dyn.state_grid(n, args.grid_points, acfg.grid_span)
        census = dyn.basin_census(params, cond, grid, acfg)
        rows = [{"kind": a.kind, "location": a.location.tolist(), "count": c, "fraction": f}
                for a, c, f in zip(census.attractors, census.counts, census.fractions)]
        for r in rows:
            print(f"{r['kind']} at {np.round(r['location'], 4).tolist()}: "
                  f"fraction {r['fraction']:.3f}")
        if census.n_nonconverged:
            log.warning("%d grid states did not converge", census.n_nonconverged)
        _write_json(out / "basins.json", {**meta, "inputs": inputs.tolist(),
                                          "grid_points": args.grid_points,
                                          "n_nonconverged": census.n_nonconverged,
                                          "basins": rows})

    else:
        if not (args.a and args.b):
            raise ConfigError("transients mode needs --a and --b trajectory CSVs")
        ra, rb = read_trajectory_csv(args.a), read_trajectory_csv(args.b)
        if ra.n_inter != n or rb.n_inter != n:
            raise DecodeError("trajectory and genome disagree on N")
        oa, ob = dyn.inter_outputs(ra, params), dyn.inter_outputs(rb, params)
        dt = cfg.physics.dt
        matches = dyn.match_transients(oa, ob, dt, args.window, args.max_shift, args.tol)
        rows = []
        for k, m in enumerate(matches[:args.top]):
            ctx_a = dyn.sensory_context(ra, (m.t_a, m.t_a + m.length))
            ctx_b = dyn.sensory_context(rb, (m.t_b, m.t_b + m.length))
            rows.append({"t_a": m.t_a, "t_b": m.t_b, "length": m.length, "shift": m.shift,
                         "rays_a": ctx_a["active_fraction"].tolist(),
                         "rays_b": ctx_b["active_fraction"].tolist()})
            dyn.write_aligned_csv(out / f"aligned{k:02d}.csv", oa, ob, m, dt)
            print(f"match {k}: t_a={m.t_a:.1f} t_b={m.t_b:.1f} length={m.length:.1f}")
        if not matches:
            print("no matches")
        _write_json(out / "transients.json", {**meta, "a": str(args.a), "b": str(args.b),
                                              "window": args.window, "tol": args.tol,
                                              "n_matches": len(matches), "matches": rows})
    return 0


# --- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="neureuse", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="TOML or JSON experiment config")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("evolve", help="run the genetic algorithm")
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int)
    e.add_argument("--runs", type=int, help="independent runs with derived seeds")
    e.add_argument("--generations", type=int)
    e.add_argument("--paradigm", choices=[x.value for x in Paradigm])
    e.add_argument("--threads", type=int, help="overrides NEUREUSE_THREADS")

    v = sub.add_parser("evaluate", help="score one genome on a task's trial grid")
    v.add_argument("genome")
    v.add_argument("--task", required=True, choices=[f.value for f in TaskFamily])
    v.add_argument("--out", help="directory for trajectory CSVs")
    v.add_argument("--n-inter", type=int, help="fail unless the genome has this N")

    c = sub.add_parser("cross-eval", help="score genomes on both tasks")
    c.add_argument("targets", nargs="*", help="genome files or run directories")
    c.add_argument("--trained", required=True, choices=[f.value for f in TaskFamily])
    c.add_argument("--random", type=int, default=0, help="also score this many random genotypes")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", help="CSV table")

    a = sub.add_parser("analyze", help="attractor, basin and transient analysis")
    a.add_argument("genome")
    a.add_argument("--mode", required=True, choices=["attractors", "basins", "transients"])
    a.add_argument("--out", required=True)
    a.add_argument("--trajectories", help="directory of trajectory CSVs from evaluate")
    a.add_argument("--inputs", type=float, nargs=7, help="clamped inputs for basins")
    a.add_argument("--grid-points", type=int, default=21)
    a.add_argument("--a", help="trajectory CSV of the first behaviour")
    a.add_argument("--b", help="trajectory CSV of the second behaviour")
    a.add_argument("--window", type=float, default=50.0)
    a.add_argument("--tol", type=float, default=0.01)
    a.add_argument("--max-shift", type=float)
    a.add_argument("--top", type=int, default=10)
    return p


COMMANDS = {"evolve": cmd_evolve, "evaluate": cmd_evaluate,
            "cross-eval": cmd_cross_eval, "analyze": cmd_analyze}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, DecodeError, OSError, ValueError) as exc:
        print(f"neureuse: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
