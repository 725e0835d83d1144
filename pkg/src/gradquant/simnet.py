"""Single-process simulation of synchronous quantized distributed SGD.

Workers compute mini-batch gradients, quantize them, and the server decodes
and averages; because dither is addressed by shared (seed, round)
coordinates, the server's reconstructions are checked bit-exact against each
worker's local reconstruction every round.  All optimizer state is replicated
deterministically, so one OptState stands in for every worker's copy.

Worker p derives its dither seed as master_seed + p.  Mini-batches come from
one shuffled global batch split contiguously by worker id; the Gaussian-noise
problem instead draws per-worker noise from seeded generators.  Set
GRADQUANT_THREADS > 1 to compute worker gradients in a thread pool (results
are keyed by worker id, so the output is identical to the sequential run).
"""

from __future__ import annotations

import concurrent.futures
import json
import math
import os
import time
from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from . import __version__
from .coding import IndexStream, coded_payload_bits, aac_encode, empirical_entropy, raw_bits
from .dither import DitherCoordinates, advance_round, dither_block, worker_seed
from .errors import ConfigError, ProtocolError
from .nested import (
    NestedConfig,
    NestedMessage,
    alpha_optimal,
    nested_decode_vector,
    nested_encode_vector,
)
from .optim import OptState, adam_state, sgd_state, step as opt_step
from .problems import (
    GaussianNoiseQuadratic,
    LogisticBlobsProblem,
    MlpProblem,
    Problem,
    QuadraticProblem,
)
from .quantizers import (
    OneBitState,
    QuantizedMessage,
    UniformQuantizerCfg,
    _f32_at_least,
    dithered_decode,
    dithered_encode,
    onebit_decode,
    onebit_encode,
    stochastic_quantize,
    uniform_quantize,
)
from .wire import (
    KIND_DITHERED,
    KIND_NESTED,
    KIND_STOCHASTIC,
    pack_nested_message,
    pack_quantized_message,
    unpack_nested_message,
    unpack_quantized_message,
)

__all__ = [
    "ExperimentConfig",
    "WorkerNode",
    "ServerNode",
    "RoundReport",
    "Simulation",
    "run_dqsgd_round",
    "run_ndqsg_round",
    "run_experiment",
    "write_reports_csv",
    "measure_aggregate_variance",
    "CSV_COLUMNS",
    "QUANTIZER_KINDS",
    "PROBLEM_KINDS",
]

QUANTIZER_KINDS = ("none", "dqsg", "qsgd", "onebit", "ndqsg")
PROBLEM_KINDS = ("quadratic", "gaussian", "logistic", "mlp")
CSV_COLUMNS = (
    "round", "wall_ms", "loss", "grad_norm", "raw_bits_total",
    "coded_bits_total", "entropy_bits_total", "excess_var", "decode_failures",
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment description; every field maps to a config-file key."""

    problem: str = "quadratic"
    quantizer: str = "dqsg"
    delta: float = 0.5
    nesting_k: int = 3
    alpha_mode: str = "one"
    workers: int = 4
    groups: str = ""
    batch: int = 256
    optimizer: str = "sgd"
    lr: float = 0.01
    decay: float = 0.98
    rounds: int = 100
    master_seed: int = 0

    def __post_init__(self):
        if self.problem not in PROBLEM_KINDS:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from {PROBLEM_KINDS}")
        if self.quantizer not in QUANTIZER_KINDS:
            raise ConfigError(f"unknown quantizer {self.quantizer!r}; choose from {QUANTIZER_KINDS}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.batch < self.workers:
            raise ConfigError("batch must be at least one sample per worker")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if not (self.delta > 0):
            raise ConfigError("delta must be positive")
        if self.nesting_k < 2:
            raise ConfigError("nesting_k must be >= 2")
        if self.lr <= 0 or not (0 < self.decay <= 1):
            raise ConfigError("need lr > 0 and decay in (0, 1]")
        if not (0 <= self.master_seed < 2**64):
            raise ConfigError("master_seed must fit in 64 bits")
        self.group_sizes()  # validates the groups string
        if self.alpha_mode not in ("one", "auto"):
            try:
                a = float(self.alpha_mode)
            except ValueError:
                raise ConfigError("alpha_mode must be 'one', 'auto', or a number in (0, 1]") from None
            if not (0 < a <= 1):
                raise ConfigError("numeric alpha_mode must lie in (0, 1]")

    def group_sizes(self) -> tuple[int, int]:
        """(dithered, nested) worker counts for the mixed scheme."""
        if self.quantizer != "ndqsg":
            return self.workers, 0
        if not self.groups:
            p2 = self.workers // 2
            return self.workers - p2, p2
        try:
            p1, p2 = (int(s) for s in self.groups.split("+"))
        except ValueError:
            raise ConfigError("groups must look like '4+4'") from None
        if p1 < 1:
            raise ConfigError("the mixed scheme needs at least one dithered worker")
        if p2 < 0 or p1 + p2 != self.workers:
            raise ConfigError(f"groups {self.groups!r} do not sum to workers={self.workers}")
        return p1, p2

    def levels_m(self) -> int:
        m = round(1.0 / self.delta)
        if m < 1 or not math.isclose(self.delta * m, 1.0, rel_tol=1e-9):
            raise ConfigError("delta must equal 1/M for an integer number of levels M")
        return m

    def as_dict(self) -> dict:
        return {
            "problem": self.problem, "quantizer": self.quantizer, "delta": self.delta,
            "nesting_k": self.nesting_k, "alpha_mode": self.alpha_mode, "workers": self.workers,
            "groups": self.groups, "batch": self.batch, "optimizer": self.optimizer,
            "lr": self.lr, "decay": self.decay, "rounds": self.rounds, "master_seed": self.master_seed,
        }


@dataclass
class WorkerNode:
    """One simulated worker: scheme, dither coordinates, per-scheme state."""

    worker_id: int
    scheme: str  # none | dqsg | qsgd | onebit | nested
    coords: DitherCoordinates
    cfg: UniformQuantizerCfg | None = None
    onebit: OneBitState | None = None


@dataclass
class ServerNode:
    """Server-side mirrors of every worker's coordinates and configuration."""

    coords: dict[int, DitherCoordinates]
    schemes: dict[int, str]
    cfgs: dict[int, UniformQuantizerCfg | None]
    round: int = 0
    gbar: np.ndarray | None = None
    # Running sums for per-worker normalized innovation power (auto alpha).
    z_power: dict[int, float] = field(default_factory=dict)
    z_count: dict[int, int] = field(default_factory=dict)


@dataclass
class RoundReport:
    round: int
    loss: float
    grad_norm: float
    raw_bits_total: float
    coded_bits_total: int
    entropy_bits_total: float
    excess_var: float
    decode_failures: int
    err_mean: float
    err_var: float
    wall_ms: float = 0.0


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("GRADQUANT_THREADS", "1")))
    except ValueError:
        return 1


def build_problem(config: ExperimentConfig) -> Problem:
    if config.problem == "quadratic":
        return QuadraticProblem()
    if config.problem == "gaussian":
        return GaussianNoiseQuadratic()
    if config.problem == "logistic":
        return LogisticBlobsProblem()
    return MlpProblem()


@dataclass
class Simulation:
    """Everything needed to run rounds: config, problem, nodes, optimizer."""

    config: ExperimentConfig
    problem: Problem
    workers: list[WorkerNode]
    server: ServerNode
    opt: OptState
    round_idx: int = 0
    coding: bool = True  # set False to skip arithmetic coding in reports

    @classmethod
    def from_config(cls, config: ExperimentConfig, problem: Problem | None = None, coding: bool = True) -> "Simulation":
        problem = problem if problem is not None else build_problem(config)
        if problem.n_samples is not None and config.batch > problem.n_samples:
            raise ConfigError("batch exceeds the dataset size")
        p1, p2 = config.group_sizes()
        workers = []
        for p in range(config.workers):
            coords = DitherCoordinates(seed=worker_seed(config.master_seed, p), round=0)
            if config.quantizer == "ndqsg":
                scheme = "dqsg" if p < p1 else "nested"
            else:
                scheme = config.quantizer
            cfg = UniformQuantizerCfg.from_levels(config.levels_m()) if scheme in ("dqsg", "qsgd") else None
            onebit = OneBitState.zeros(problem.dim) if scheme == "onebit" else None
            workers.append(WorkerNode(worker_id=p, scheme=scheme, coords=coords, cfg=cfg, onebit=onebit))
        server = ServerNode(
            coords={w.worker_id: w.coords for w in workers},
            schemes={w.worker_id: w.scheme for w in workers},
            cfgs={w.worker_id: w.cfg for w in workers},
        )
        w0 = problem.initial_point()
        epoch_rounds = max(1, (problem.n_samples or config.batch) // config.batch)
        if config.optimizer == "sgd":
            opt = sgd_state(w0, lr=config.lr, decay=config.decay, epoch_rounds=epoch_rounds)
        elif config.optimizer == "adam":
            opt = adam_state(w0, lr=config.lr, decay=config.decay, epoch_rounds=epoch_rounds)
        else:
            raise ConfigError(f"unknown optimizer {config.optimizer!r}")
        return cls(config=config, problem=problem, workers=workers, server=server, opt=opt)

    # ------------------------------------------------------------------ rounds

    def _check_lockstep(self):
        for w in self.workers:
            if w.coords.round != self.round_idx:
                raise ProtocolError(f"worker {w.worker_id} is at round {w.coords.round}, harness at {self.round_idx}")
            mirror = self.server.coords[w.worker_id]
            if mirror != w.coords:
                raise ProtocolError(f"server mirror for worker {w.worker_id} diverged: {mirror} != {w.coords}")
        if self.server.round != self.round_idx:
            raise ProtocolError(f"server is at round {self.server.round}, harness at {self.round_idx}")

    def _worker_gradients(self, w: np.ndarray) -> list[np.ndarray]:
        cfg = self.config
        if self.problem.n_samples is not None:
            rng = np.random.default_rng((cfg.master_seed, self.round_idx, 0xBA7C))
            global_batch = rng.permutation(self.problem.n_samples)[: cfg.batch]
            slices = np.array_split(global_batch, cfg.workers)
            jobs = [(self.problem.grad_on, (w, s)) for s in slices]
        else:
            per = max(1, cfg.batch // cfg.workers)
            jobs = [
                (self.problem.stochastic_grad,
                 (w, per, np.random.default_rng((cfg.master_seed, self.round_idx, p, 0x6E))))
                for p in range(cfg.workers)
            ]
        nthreads = _threads()
        if nthreads > 1:
            with concurrent.futures.ThreadPoolExecutor(max_workers=nthreads) as pool:
                return list(pool.map(lambda job: job[0](*job[1]), jobs))
        return [fn(*args) for fn, args in jobs]

    def _alpha_for(self, worker_id: int, delta1: float) -> float:
        mode = self.config.alpha_mode
        if mode == "one":
            return 1.0
        if mode != "auto":
            return float(mode)
        count = self.server.z_count.get(worker_id, 0)
        if count == 0:
            return 1.0
        var = self.server.z_power[worker_id] / count
        if var <= delta1 * delta1 / 12.0:
            return 1.0
        return alpha_optimal(delta1, math.sqrt(var))

    def _account(self, stream: IndexStream | None, levels: int, n: int, scales: int, acc: dict):
        if stream is None:  # unquantized baseline: 32-bit floats, no index stream
            acc["raw"] += 32.0 * n
            acc["entropy"] += 32.0 * n
            acc["coded"] += 32 * n
            return
        acc["raw"] += raw_bits(n, levels, scales)
        acc["entropy"] += empirical_entropy(stream)
        if self.coding:
            acc["coded"] += coded_payload_bits(aac_encode(stream)) + 32 * scales

    def step(self) -> RoundReport:
        """Run one synchronous round and apply the aggregated update."""
        t0 = time.perf_counter()
        self._check_lockstep()
        cfg = self.config
        w = self.opt.w
        loss = self.problem.loss(w)
        exact = self.problem.exact_grad(w)
        grads = self._worker_gradients(w)

        acc = {"raw": 0.0, "entropy": 0.0, "coded": 0}
        sq_err_sum = 0.0
        err_all = []
        failures = 0

        # Phase 1: every non-nested worker encodes; server decodes and averages.
        decoded: list[np.ndarray] = []
        nested_workers = []
        for node, g in zip(self.workers, grads):
            if node.scheme == "nested":
                nested_workers.append((node, g))
                continue
            recon_local, recon_server, stream, levels, scales = self._roundtrip_plain(node, g)
            if not np.array_equal(recon_local, recon_server):
                raise ProtocolError(f"worker {node.worker_id} and server reconstructions differ")
            decoded.append(recon_server)
            self._account(stream, levels, g.size, scales, acc)
            err = recon_server - g
            sq_err_sum += float(err @ err)
            err_all.append(err)
        if not decoded:
            raise ProtocolError("no seed-backed workers to anchor the aggregate")
        gbar = np.mean(decoded, axis=0)
        m = len(decoded)

        # Phase 2: nested workers decode in ascending id against the running mean.
        for node, g in nested_workers:
            kappa = _f32_at_least(float(np.max(np.abs(g))))
            if kappa == 0.0:
                gtilde = np.zeros_like(g)
                self._account(IndexStream(np.zeros(g.size, dtype=np.int64), 0, 0), 2, g.size, 1, acc)
            else:
                delta1 = 1.0 / cfg.nesting_k  # coarse step pinned to 1 on the normalized scale
                alpha = self._alpha_for(node.worker_id, delta1)
                ncfg = NestedConfig(delta1=delta1, nesting_k=cfg.nesting_k, alpha=alpha)
                msg = nested_encode_vector(g, kappa, ncfg, node.coords)
                packed = pack_nested_message(msg)
                msg_rx = unpack_nested_message(packed, ncfg)
                gtilde = nested_decode_vector(msg_rx, gbar, cfg=ncfg, dither=self.server.coords[node.worker_id])
                failures += self._count_failures(g, gbar, msg_rx, ncfg)
                lo, hi = -(cfg.nesting_k // 2), (cfg.nesting_k - 1) // 2 if cfg.nesting_k % 2 else cfg.nesting_k // 2 - 1
                stream = IndexStream(msg_rx.rel_indices, lo, hi)
                self._account(stream, cfg.nesting_k, g.size, 1, acc)
                z = (g - gbar) / msg_rx.kappa
                self.server.z_power[node.worker_id] = self.server.z_power.get(node.worker_id, 0.0) + float(z @ z) / g.size
                self.server.z_count[node.worker_id] = self.server.z_count.get(node.worker_id, 0) + 1
            err = gtilde - g
            sq_err_sum += float(err @ err)
            err_all.append(err)
            gbar = (m * gbar + gtilde) / (m + 1)
            m += 1

        self.opt = opt_step(self.opt, gbar)
        for node in self.workers:
            node.coords = advance_round(node.coords)
            self.server.coords[node.worker_id] = node.coords
        self.server.round += 1
        self.server.gbar = gbar
        self.round_idx += 1

        err_flat = np.concatenate(err_all)
        return RoundReport(
            round=self.round_idx - 1,
            loss=loss,
            grad_norm=float(np.linalg.norm(exact)),
            raw_bits_total=acc["raw"],
            coded_bits_total=acc["coded"],
            entropy_bits_total=acc["entropy"],
            excess_var=sq_err_sum / cfg.workers,
            decode_failures=failures,
            err_mean=float(err_flat.mean()),
            err_var=float(err_flat.var()),
            wall_ms=(time.perf_counter() - t0) * 1e3,
        )

    def _roundtrip_plain(self, node: WorkerNode, g: np.ndarray):
        """Encode/serialize/decode for the non-nested schemes; returns both reconstructions."""
        n = g.size
        if node.scheme == "none":
            return g.copy(), g.copy(), None, 0, 0
        if node.scheme == "onebit":
            msg, node.onebit = onebit_encode(g, node.onebit)
            recon = onebit_decode(msg)
            stream = IndexStream(msg.bits.astype(np.int64), 0, 1)
            # one sign bit per element plus the two conditional means
            return recon, recon.copy(), stream, 2, 2
        assert node.cfg is not None
        if node.scheme == "dqsg":
            msg = dithered_encode(g, node.cfg, node.coords)
            local = dithered_decode(msg)
            packed = pack_quantized_message(msg)
            msg_rx = unpack_quantized_message(packed, self.server.cfgs[node.worker_id])
            server = dithered_decode(msg_rx, self.server.coords[node.worker_id])
            stream = IndexStream(msg_rx.indices, -node.cfg.levels_m, node.cfg.levels_m)
            return local, server, stream, node.cfg.n_levels, len(msg.partitions)
        if node.scheme == "qsgd":
            msg = self._stochastic_encode(node, g)
            local = self._stochastic_decode(msg)
            packed = pack_quantized_message(msg, kind=KIND_STOCHASTIC)
            msg_rx = unpack_quantized_message(packed, self.server.cfgs[node.worker_id], kind=KIND_STOCHASTIC)
            server = self._stochastic_decode(msg_rx)
            stream = IndexStream(msg_rx.indices, -node.cfg.levels_m, node.cfg.levels_m)
            return local, server, stream, node.cfg.n_levels, len(msg.partitions)
        raise ConfigError(f"unknown scheme {node.scheme!r}")

    def _stochastic_encode(self, node: WorkerNode, g: np.ndarray) -> QuantizedMessage:
        """Randomized rounding; the unit uniforms come from the shared dither stream."""
        cfg = node.cfg
        kappa = _f32_at_least(float(np.max(np.abs(g))))
        n = g.size
        if kappa == 0.0:
            idx = np.zeros(n, dtype=np.int64)
        else:
            rand = dither_block(node.coords, n, cfg.delta) / cfg.delta + 0.5
            levels = stochastic_quantize(g / kappa, cfg.levels_m, rand)
            idx = np.rint(levels * cfg.levels_m).astype(np.int64)
        from .quantizers import PartitionBound  # local import to avoid cycle noise
        return QuantizedMessage(cfg=cfg, dither=node.coords, indices=idx,
                                partitions=(PartitionBound(0, n, kappa),))

    @staticmethod
    def _stochastic_decode(msg: QuantizedMessage) -> np.ndarray:
        out = np.zeros(msg.n, dtype=np.float64)
        for a, b, kappa in msg.partitions:
            out[a:b] = kappa * msg.cfg.delta * msg.indices[a:b]
        return out

    def _count_failures(self, g: np.ndarray, gbar: np.ndarray, msg: NestedMessage, ncfg: NestedConfig) -> int:
        """Ground-truth failure count: the decoder picked the wrong coarse cell."""
        x = g / msg.kappa
        y = gbar / msg.kappa
        u = dither_block(msg.dither, g.size, ncfg.delta1)
        t = ncfg.alpha * x + u
        e = t - uniform_quantize(t, ncfg.delta1)
        z = x - y
        wrong = uniform_quantize(ncfg.alpha * z - e, ncfg.delta2) != 0.0
        return int(np.count_nonzero(wrong))


def run_dqsgd_round(sim: Simulation) -> RoundReport:
    """One round of the all-dithered scheme."""
    if any(w.scheme == "nested" for w in sim.workers):
        raise ConfigError("simulation contains nested workers; use run_ndqsg_round")
    return sim.step()


def run_ndqsg_round(sim: Simulation) -> RoundReport:
    """One round of the mixed dithered + nested scheme."""
    if not any(w.scheme == "nested" for w in sim.workers):
        raise ConfigError("simulation has no nested workers; use run_dqsgd_round")
    return sim.step()


def run_experiment(
    config: ExperimentConfig,
    csv_path=None,
    json_path=None,
    problem: Problem | None = None,
) -> tuple[list[RoundReport], OptState]:
    """Run config.rounds rounds; optionally write the CSV log and JSON summary."""
    t0 = time.perf_counter()
    sim = Simulation.from_config(config, problem=problem)
    reports = [sim.step() for _ in range(config.rounds)]
    wall_s = time.perf_counter() - t0
    if csv_path is not None:
        write_reports_csv(csv_path, reports, config)
    if json_path is not None:
        final_loss = sim.problem.loss(sim.opt.w)
        summary = {
            "version": __version__,
            "config": config.as_dict(),
            "rounds": config.rounds,
            "final_loss": final_loss,
            "total_raw_bits": sum(r.raw_bits_total for r in reports),
            "total_coded_bits": sum(r.coded_bits_total for r in reports),
            "decode_failures": sum(r.decode_failures for r in reports),
            "wall_seconds": wall_s,
        }
        with open(json_path, "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return reports, sim.opt


def write_reports_csv(path, reports: list[RoundReport], config: ExperimentConfig):
    """Deterministic CSV: same config and seed produce byte-identical files.

    wall_ms is reported as 0.0 here for exactly that reason; measured timing
    lives in the JSON summary, which makes no determinism promise.
    """
    lines = [f"# gradquant {__version__}"]
    for key, value in sorted(config.as_dict().items()):
        lines.append(f"# {key}={value}")
    lines.append(",".join(CSV_COLUMNS))
    for r in reports:
        lines.append(
            f"{r.round},0.0,{_fmt(r.loss)},{_fmt(r.grad_norm)},{_fmt(r.raw_bits_total)},"
            f"{r.coded_bits_total},{_fmt(r.entropy_bits_total)},{_fmt(r.excess_var)},{r.decode_failures}"
        )
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def _fmt(x: float) -> str:
    return repr(float(x))


def measure_aggregate_variance(
    problem: Problem,
    w: np.ndarray,
    n_workers: int,
    rounds: int,
    per_worker_batch: int,
    cfg: UniformQuantizerCfg,
    master_seed: int = 0,
) -> float:
    """Mean ||gbar_tilde - grad||^2 at a fixed point, per-worker batch held constant.

    This is the 1/P-scaling measurement: total sample count grows with the
    worker count, matching the per-worker variance model of the horizon
    calculator.
    """
    exact = problem.exact_grad(w)
    coords = [DitherCoordinates(seed=worker_seed(master_seed, p), round=0) for p in range(n_workers)]
    total = 0.0
    for _ in range(rounds):
        decoded = []
        for p in range(n_workers):
            rng = np.random.default_rng((master_seed, coords[p].round, p, 0x6E))
            g = problem.stochastic_grad(w, per_worker_batch, rng)
            msg = dithered_encode(g, cfg, coords[p])
            decoded.append(dithered_decode(msg))
            coords[p] = advance_round(coords[p])
        diff = np.mean(decoded, axis=0) - exact
        total += float(diff @ diff)
    return total / rounds
