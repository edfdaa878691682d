"""Batch pipelines behind the command-line interface: pool generation,
train/test experiments, resource plans, cluster analysis and kernel PCA.

Every pipeline is a pure function of its configuration, input files and
master seed; all randomness flows through :mod:`glqk.seeding`.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import subprocess
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import InvalidArgument
from .kernels import KernelConfig, glqk_window_mean, shadow_gram_values, standardize
from .lattice import Lattice
from .learn import C_GRID, H_GRID, LAMBDA_GRID, ZETA_GRID, Grid, grid_search_cv, kernel_pca, predict
from .learn import accuracy, r_squared
from .pauli_poly import (
    ObservablePolynomial,
    cluster_approximation,
    cover_report,
    evaluate_exact,
    local_factor_count,
    target_polynomial,
)
from .planner import plan_all
from .qsim import (
    N_CAP,
    disturb_inversion_symmetric,
    evolve,
    ground_state,
    order_parameter_z,
    random_dynamics_spec,
    random_product_state,
    translation_symmetry_defect,
    xxz_spec,
)
from .seeding import (
    STREAM_FOLDS,
    STREAM_SHADOW,
    STREAM_SPLIT,
    STREAM_STATE,
    derive_seed,
    rng_for,
)
from .shadows import ShadowPool, estimate_polynomial, pool_to_bytes, read_pool, sample_shadow

TARGETS = ("g1", "g2", "g3")


@dataclass
class ExperimentConfig:
    task: str = "random_dynamics"          # or "qpr"
    n: int = 10
    D: int = 1
    symmetric: bool = True
    target: str = "g1"                     # primary pool label (random_dynamics)
    targets: list[str] | None = None       # experiment targets; default [target]
    N_pool: int = 200
    T: int = 500
    t_evolve: float = 0.5
    delta: float = 0.5
    J_range: tuple[float, float] = (0.1, 1.9)
    exclusion_band: float = 0.05
    order_width: int = 2
    N_train: list[int] = field(default_factory=lambda: [60])
    M_test: int = 100
    kernels: list[str] = field(default_factory=lambda: ["glqk_poly", "shadow"])
    lambdas: list[float] = field(default_factory=lambda: list(LAMBDA_GRID))
    Cs: list[float] = field(default_factory=lambda: list(C_GRID))
    hs: list[int] = field(default_factory=lambda: list(H_GRID))
    zetas: list[int] = field(default_factory=lambda: list(ZETA_GRID))
    folds: int = 5
    repeats: int = 10
    seed: int = 0
    tau: float = 1.0
    gamma: float = 1.0
    standardize: bool = True
    # plan / analyze / pca
    polynomial: dict | str | None = None
    xi: float = 1.0
    epsilon: float = 0.1
    n_values: list[int] | None = None
    cluster_delta: int = 1
    zeta: int = 2
    kernel: dict | None = None
    count: int = 200

    def __post_init__(self):
        if self.task not in ("random_dynamics", "qpr"):
            raise InvalidArgument(f"task must be 'random_dynamics' or 'qpr', got {self.task!r}")
        if self.D != 1:
            raise InvalidArgument("only one-dimensional data generation is supported")
        if self.task == "random_dynamics" and self.target not in TARGETS:
            raise InvalidArgument(f"target must be one of {TARGETS}, got {self.target!r}")
        for t in self.targets or []:
            if t not in TARGETS:
                raise InvalidArgument(f"unknown target {t!r}")
        if self.task == "qpr" and self.n % 2:
            raise InvalidArgument("qpr needs an even chain length")
        self.J_range = tuple(float(x) for x in self.J_range)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgument(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidArgument(f"cannot read config {path}: {exc}") from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        d["J_range"] = list(self.J_range)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def lattice(self) -> Lattice:
        return Lattice.ring(self.n)


# ---------------------------------------------------------------------------
# provenance and output helpers


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=10, cwd=Path(__file__).parent,
        )
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def provenance_line(cfg: ExperimentConfig) -> str:
    return f"# config_hash={cfg.digest()} git={_git_describe()} seed={cfg.seed}"


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return "" if x is None else str(x)


def write_csv(path: Path, header: list[str], rows: list[list], cfg: ExperimentConfig) -> None:
    buf = io.StringIO()
    buf.write(provenance_line(cfg) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    path.write_text(buf.getvalue())


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def load_polynomial(spec, lattice: Lattice | None = None) -> ObservablePolynomial:
    """Polynomial from an inline JSON object or a file path."""
    if spec is None:
        raise InvalidArgument("config has no 'polynomial'")
    if isinstance(spec, str):
        try:
            spec = json.loads(Path(spec).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidArgument(f"cannot read polynomial {spec}: {exc}") from exc
    return ObservablePolynomial.from_json_obj(spec, lattice)


# ---------------------------------------------------------------------------
# pool generation


def _qpr_coupling(cfg: ExperimentConfig, rng: np.random.Generator) -> float:
    lo, hi = cfg.J_range
    while True:
        J = float(rng.uniform(lo, hi))
        if abs(J - 1.0) > cfg.exclusion_band:
            return J


def generate_entry(cfg: ExperimentConfig, i: int):
    """State, label and metadata of pool entry ``i``."""
    lat = cfg.lattice
    state_seed = derive_seed(cfg.seed, STREAM_STATE, i)
    shadow_seed = derive_seed(cfg.seed, STREAM_SHADOW, i)
    rng = np.random.default_rng(state_seed)
    meta = {"index": i, "task": cfg.task, "state_seed": state_seed, "shadow_seed": shadow_seed}
    if cfg.task == "random_dynamics":
        spec = random_dynamics_spec(cfg.n, cfg.symmetric, rng)
        init = random_product_state(lat, cfg.symmetric, rng)
        state = evolve(spec, init, cfg.t_evolve)
        labels = {g: evaluate_exact(target_polynomial(g, lat), state) for g in TARGETS}
        meta.update(symmetric=cfg.symmetric, target=cfg.target, labels=labels, t=cfg.t_evolve)
        if cfg.symmetric:
            meta["symmetry_defect"] = translation_symmetry_defect(state)
        label = labels[cfg.target]
    else:
        J = _qpr_coupling(cfg, rng)
        gs, energy = ground_state(xxz_spec(cfg.n, J, cfg.delta))
        state = disturb_inversion_symmetric(gs, rng)
        label = 1.0 if J > 1.0 else -1.0
        meta.update(J=J, delta=cfg.delta, energy=energy, phase="spt" if label > 0 else "trivial",
                    z=order_parameter_z(state, cfg.order_width), exclusion_band=cfg.exclusion_band)
    shadow = sample_shadow(state, cfg.T, shadow_seed)
    return state, shadow, label, meta


def cmd_generate(cfg: ExperimentConfig, out_dir) -> Path:
    """Write ``pool.glqs`` and ``pool_manifest.json`` into ``out_dir``."""
    if cfg.n > N_CAP:
        raise InvalidArgument(f"n={cfg.n} exceeds the simulator cap {N_CAP}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pool = ShadowPool(cfg.lattice, cfg.T)
    manifest = []
    for i in range(cfg.N_pool):
        _, shadow, label, meta = generate_entry(cfg, i)
        pool.append(shadow, label, meta)
        manifest.append(dict(meta, label=label))
    path = out / "pool.glqs"
    data = pool_to_bytes(pool)
    path.write_bytes(data)
    write_json(out / "pool_manifest.json", {
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "pool_sha256": hashlib.sha256(data).hexdigest(),
        "entries": manifest,
    })
    return path


# ---------------------------------------------------------------------------
# Gram matrices over a whole pool


def pool_grams(pool: ShadowPool, kind: str, cfg: ExperimentConfig) -> dict:
    """``(h, zeta) -> N x N`` Gram (standardised if configured) over the whole pool.

    GLQK window means are computed once per ``zeta``; powers ``h`` reuse them.
    Infeasible ``zeta`` values map to ``None``.
    """
    rec = pool.records()
    out = {}
    if kind == "shadow":
        K = shadow_gram_values(rec, None, cfg.tau, cfg.gamma)
        out[(None, None)] = standardize(K).values if cfg.standardize else K
        return out
    for zeta in dict.fromkeys(cfg.zetas):
        if zeta > min(pool.lattice.dims):
            for h in cfg.hs:
                out[(h, zeta)] = None
            continue
        base = glqk_window_mean(rec, None, pool.lattice, zeta, cfg.tau, cfg.gamma)
        for h in dict.fromkeys(cfg.hs):
            K = base ** h
            out[(h, zeta)] = standardize(K).values if cfg.standardize else K
    return out


def _labels(pool: ShadowPool, cfg: ExperimentConfig, target: str) -> np.ndarray:
    if cfg.task == "qpr":
        return pool.labels
    return np.array([e.metadata["labels"][target] for e in pool.entries])


def cmd_experiment(cfg: ExperimentConfig, pool_path, out_dir) -> dict:
    """Repeated train/test runs with grid-searched hyperparameters.

    Writes ``runs.csv`` (one row per kernel x target x N x repeat),
    ``summary.csv`` (mean and population std), ``scatter.csv`` and
    ``results.json``.
    """
    pool = read_pool(pool_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    need = max(cfg.N_train) + cfg.M_test
    if len(pool) < need:
        raise InvalidArgument(f"pool has {len(pool)} entries, experiment needs {need}")
    task = "svm" if cfg.task == "qpr" else "krr"
    targets = ["phase"] if cfg.task == "qpr" else (cfg.targets or [cfg.target])
    regs = cfg.Cs if task == "svm" else cfg.lambdas
    runs, scatter, reports = [], [], []
    floors: dict = {}
    for kind in cfg.kernels:
        grams = pool_grams(pool, kind, cfg)
        grid = Grid(tuple(regs), (None,), (None,)) if kind == "shadow" else Grid(
            tuple(regs), tuple(cfg.hs), tuple(cfg.zetas))
        for ti, target in enumerate(targets):
            y_all = _labels(pool, cfg, target)
            for ni, N in enumerate(cfg.N_train):
                for r in range(cfg.repeats):
                    stream_index = (ti * 1000 + ni) * 100_000 + r
                    perm = rng_for(cfg.seed, STREAM_SPLIT, stream_index).permutation(len(pool))
                    tr, te = perm[:N], perm[N : N + cfg.M_test]
                    fold_rng = rng_for(cfg.seed, STREAM_FOLDS, stream_index)

                    def gram_for(h, zeta, tr=tr):
                        K = grams[(h, zeta)]
                        return None if K is None else K[np.ix_(tr, tr)]

                    rep = grid_search_cv(gram_for, y_all[tr], task, grid, cfg.folds,
                                         seed=stream_index, kernel_kind=kind, rng=fold_rng)
                    sel = rep.selected
                    K_test = grams[(sel["h"], sel["zeta"])][np.ix_(tr, te)]
                    pred = predict(rep.model, K_test)
                    y_te = y_all[te]
                    score = accuracy(y_te, pred) if task == "svm" else r_squared(y_te, pred)
                    floor = None
                    if task == "krr":
                        key = (target, tuple(te))
                        if key not in floors:
                            g = target_polynomial(target, pool.lattice)
                            est = np.array([estimate_polynomial(pool.entries[i].shadow, g) for i in te])
                            floors[key] = float(math.sqrt(np.mean((y_te - est) ** 2)))
                        floor = floors[key]
                        scatter += [[kind, target, N, r, int(i), float(a), float(b)]
                                    for i, a, b in zip(te, y_te, pred)]
                    runs.append([kind, target, pool.lattice.n, N, r, float(score), float(sel["reg"]),
                                 sel["h"], sel["zeta"], float(sel["score"]), floor])
                    reports.append(dict(kernel=kind, target=target, N=N, repeat=r, **rep.to_dict()))
    header = ["kernel", "target", "n", "N_train", "repeat", "score", "reg", "h", "zeta",
              "cv_score", "noise_floor"]
    write_csv(out / "runs.csv", header, runs, cfg)
    summary = []
    for kind in cfg.kernels:
        for target in targets:
            for N in cfg.N_train:
                s = [row[5] for row in runs if row[0] == kind and row[1] == target and row[3] == N]
                summary.append([kind, target, pool.lattice.n, N, len(s), float(np.mean(s)), float(np.std(s))])
    write_csv(out / "summary.csv", ["kernel", "target", "n", "N_train", "repeats", "mean", "std"],
              summary, cfg)
    if scatter:
        write_csv(out / "scatter.csv", ["kernel", "target", "N_train", "repeat", "index", "y_true", "y_pred"],
                  scatter, cfg)
    result = {
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "metric": "accuracy" if task == "svm" else "r2",
        "summary": [dict(zip(["kernel", "target", "n", "N_train", "repeats", "mean", "std"], s))
                    for s in summary],
        "cv_reports": reports,
    }
    write_json(out / "results.json", result)
    return result


# ---------------------------------------------------------------------------
# planning, cluster analysis, kernel PCA


def _config_polynomial(cfg: ExperimentConfig) -> ObservablePolynomial:
    # files and inline objects without "dims" live on the config's ring
    spec = cfg.polynomial
    if isinstance(spec, str):
        try:
            spec = json.loads(Path(spec).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidArgument(f"cannot read polynomial {cfg.polynomial}: {exc}") from exc
    return load_polynomial(spec, None if isinstance(spec, dict) and "dims" in spec else cfg.lattice)


def cmd_plan(cfg: ExperimentConfig) -> dict:
    """All four resource regimes for each requested system size."""
    g = _config_polynomial(cfg)
    sizes = cfg.n_values or [g.lattice.n]
    return {
        "epsilon": cfg.epsilon,
        "xi": cfg.xi,
        "m": g.m,
        "p": g.p,
        "norm1": g.norm1,
        "plans": [p.to_dict() for n in sizes for p in plan_all(g, cfg.xi, cfg.epsilon, n=n,
                                                               tau=cfg.tau, gamma=cfg.gamma)],
    }


def cmd_analyze(cfg: ExperimentConfig) -> dict:
    """Clusters per term, cover number, factor count and merged norm."""
    g = _config_polynomial(cfg)
    if not g.terms:
        return {"terms": [], "merged_terms": 0, "alpha_g": None, "beta_g": None, "norm1_ca": 0.0}
    dec = cluster_approximation(g, cfg.cluster_delta)
    rep = cover_report(dec, cfg.zeta)
    return {
        "delta": cfg.cluster_delta,
        "zeta": cfg.zeta,
        "terms": [
            {"coefficient": t.coefficient, "clusters": [str(c) for c in t.clusters], "b": t.b}
            for t in dec.terms
        ],
        "merged_terms": len(dec.terms),
        "alpha_g": rep.alpha,
        "alpha_exact": rep.exact,
        "beta_g": local_factor_count(dec),
        "norm1": g.norm1,
        "norm1_ca": dec.norm1,
        "m": g.m,
        "p": g.p,
    }


def cmd_pca(cfg: ExperimentConfig, pool_path, out_dir=None) -> np.ndarray:
    """Two kernel-PCA coordinates for the first ``count`` pool entries."""
    pool = read_pool(pool_path)
    if cfg.count > len(pool):
        raise InvalidArgument(f"count {cfg.count} exceeds pool size {len(pool)}")
    sub = pool.subset(range(cfg.count))
    try:
        kc = KernelConfig(**(cfg.kernel or {"kind": "glqk_poly", "zeta": cfg.zeta}))
    except TypeError as exc:
        raise InvalidArgument(f"bad kernel settings {cfg.kernel}: {exc}") from exc
    rec = sub.records()
    if kc.kind == "shadow":
        K = shadow_gram_values(rec, None, kc.tau, kc.gamma)
    else:
        K = glqk_window_mean(rec, None, sub.lattice, kc.zeta, kc.tau, kc.gamma) ** kc.h
    res = kernel_pca(standardize(K).values, 2)
    rows = [[i, float(e.label), float(res.coords[i, 0]), float(res.coords[i, 1])]
            for i, e in enumerate(sub.entries)]
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "pca.csv", ["index", "label", "pc1", "pc2"], rows, cfg)
    return res.coords
