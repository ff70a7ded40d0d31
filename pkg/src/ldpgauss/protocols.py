"""End-to-end protocol orchestration.

Runners enforce the trust boundary and the round structure: user-side code
(the randomizer kernels) is the only consumer of raw samples, analyst-side
computation operates on the privatized reports alone, and every message
crossing the boundary lands in a replayable transcript. Replaying a
transcript re-runs the analyst computation bit for bit without samples,
which is the executable proof that the analyst never needed them.

Partitioning is deterministic: the first half of the user indices is split
into per-level blocks (ascending level order), the second half either
reports wholesale in round two or is split into one-round subgroup blocks.
Leftover users that do not fill a block are assigned to a discard pool and
never queried.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from ldpgauss.aggregation import (
    MalformedInputError,
    PairedHistogram,
    QuadHistogram,
    SignHistogram,
    debias_quad_counts,
    debias_sign_counts,
    pair_adjacent_bins,
    quad_counts_from_values,
    sign_counts_from_values,
)
from ldpgauss.analyst import (
    LevelPlan,
    est_mean,
    est_var,
    refine_known_sigma,
    select_subgroup_kv,
    select_subgroup_uv,
)
from ldpgauss.numerics import TrialStreams
from ldpgauss.randomizers import (
    LatticeSpec,
    one_round_uv_rr2_values,
    rr1_values,
    sign_rr_values,
    sign_with_positive_zero,
    uv_rr2_values,
)

PROTOCOLS = ("kv2", "kv1", "uv2", "uv1")

# 2^level must stay a normal double; beyond this the config is nonsense.
_MAX_TOP_LEVEL = 960


class ConfigError(ValueError):
    """The configuration cannot produce a valid partition or run."""


class ReplayMismatch(RuntimeError):
    """A replayed analyst output diverged from the recorded one."""

    def __init__(self, name: str, recorded, recomputed):
        super().__init__(f"{name}: recorded {recorded!r} != recomputed {recomputed!r}")
        self.name = name
        self.recorded = recorded
        self.recomputed = recomputed


@dataclass(frozen=True)
class KnownSigma:
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0.0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class BoundedSigma:
    sigma_min: float
    sigma_max: float

    def __post_init__(self):
        if not (0.0 < self.sigma_min <= self.sigma_max):
            raise ConfigError(
                f"need 0 < sigma_min <= sigma_max, got [{self.sigma_min}, {self.sigma_max}]"
            )


@dataclass(frozen=True)
class SimulationTruth:
    """Ground truth for sampling only; analyst code never receives it."""

    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0.0:
            raise ConfigError(f"true sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class ProtocolConfig:
    """Public protocol parameters plus the sealed simulation truth.

    Subgroup sizes: k overrides the two-round known-variance level size, k1
    the level size everywhere else, k2 the one-round refinement subgroups.
    Unset sizes fall back to ceil(c_k * ln(8 max(n,2)/beta) / eps^2), or to
    the much larger proof-grade constant when proof_constants is set.
    """

    eps: float
    beta: float
    n: int
    variance_mode: Union[KnownSigma, BoundedSigma]
    truth: Optional[SimulationTruth] = None
    master_seed: int = 0
    k: Optional[int] = None
    k1: Optional[int] = None
    k2: Optional[int] = None
    c_k: float = 8.0
    proof_constants: bool = False

    def __post_init__(self):
        if not self.eps > 0.0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if not 0.0 < self.beta < 1.0:
            raise ConfigError(f"beta must be in (0, 1), got {self.beta}")
        if self.n < 2 or self.n % 2 != 0:
            raise ConfigError(f"n must be even and at least 2, got {self.n}")

    def default_level_size(self) -> int:
        n_eff = max(self.n, 2)
        if self.proof_constants:
            # Proof-grade constants, with the level count majorized by n.
            a = 5000.0 * math.log(5.0 * n_eff / self.beta)
            b = 625.0 * ((self.eps + 4.0) / (self.eps * math.sqrt(2.0))) ** 2 * math.log(
                4.0 * n_eff / self.beta
            )
            return int(math.ceil(max(a, b)))
        return int(math.ceil(self.c_k * math.log(8.0 * n_eff / self.beta) / self.eps ** 2))


@dataclass(frozen=True)
class PartitionPlan:
    """Deterministic assignment of user indices to protocol roles."""

    protocol: str
    n: int
    eps: float
    beta: float
    k1: int
    level_plan: LevelPlan
    u2_start: int
    k2: Optional[int] = None
    rho: Optional[int] = None
    sigma: Optional[float] = None  # known-variance modes only
    # one-round subgroup keys in block order: ints (kv1) or (level, m) pairs
    group_keys: tuple = ()

    @property
    def levels(self) -> range:
        return self.level_plan.levels

    @property
    def u1_discarded(self) -> int:
        return self.u2_start - self.level_plan.count * self.k1

    @property
    def u2_discarded(self) -> int:
        if not self.group_keys:
            return 0
        return (self.n - self.u2_start) - len(self.group_keys) * self.k2

    @property
    def discarded(self) -> int:
        return self.u1_discarded + self.u2_discarded

    def u1_level_indices(self, level_index: int) -> np.ndarray:
        start = level_index * self.k1
        return np.arange(start, start + self.k1)

    def u2_indices(self) -> np.ndarray:
        return np.arange(self.u2_start, self.n)

    def u2_group_indices(self, group_index: int) -> np.ndarray:
        start = self.u2_start + group_index * self.k2
        return np.arange(start, start + self.k2)

    def kv1_lattice(self, m: int) -> LatticeSpec:
        return LatticeSpec(offset=0.2 * self.sigma * m, spacing=self.rho * self.sigma)

    def uv1_lattice(self, level: int, m: int) -> LatticeSpec:
        scale = 2.0 ** level
        return LatticeSpec(offset=m * scale, spacing=self.rho * scale)

    def uv1_noise_numerator(self, level: int) -> float:
        return 2.0 * self.rho * 2.0 ** level

    def summary(self) -> dict:
        out = {
            "protocol": self.protocol,
            "n": self.n,
            "k1": self.k1,
            "levels": [self.level_plan.l_min, self.level_plan.l_max],
            "discarded": self.discarded,
        }
        if self.k2 is not None:
            out["k2"] = self.k2
        if self.rho is not None:
            out["rho"] = self.rho
        if self.group_keys:
            out["subgroups"] = len(self.group_keys)
        return out


@dataclass(frozen=True)
class EstimateOutcome:
    protocol: str
    mu_hat1: float
    sigma_hat: Optional[float]
    mu_hat2: float
    plan_summary: dict = field(default_factory=dict, compare=False)

    def as_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "mu_hat1": self.mu_hat1,
            "sigma_hat": self.sigma_hat,
            "mu_hat2": self.mu_hat2,
        }


def _known_sigma(config: ProtocolConfig) -> float:
    if not isinstance(config.variance_mode, KnownSigma):
        raise ConfigError("protocol requires the known-variance mode")
    return config.variance_mode.sigma


def _sigma_bounds(config: ProtocolConfig) -> Tuple[float, float]:
    if not isinstance(config.variance_mode, BoundedSigma):
        raise ConfigError("protocol requires the bounded-variance mode")
    return config.variance_mode.sigma_min, config.variance_mode.sigma_max


def plan_partition(config: ProtocolConfig, protocol: str) -> PartitionPlan:
    """Lay out users, levels, and one-round subgroups for a protocol run.

    Depends only on public configuration, so the replay path can rebuild the
    exact plan without the simulation truth.
    """
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {protocol!r}")
    n, eps, beta = config.n, config.eps, config.beta
    half = n // 2

    if protocol == "kv2":
        k1 = config.k or config.k1 or config.default_level_size()
    else:
        k1 = config.k1 or config.k or config.default_level_size()
    if k1 < 1:
        raise ConfigError(f"level subgroup size must be positive, got {k1}")
    level_count = half // k1
    if level_count < 1:
        raise ConfigError(
            f"n = {n} cannot fill one level subgroup of size {k1}; the protocol "
            f"needs n / log(n) to grow like log(mu) log(1/beta) / eps^2"
        )

    if protocol in ("kv2", "kv1"):
        sigma = _known_sigma(config)
        l_min = math.floor(math.log2(sigma))
    else:
        sigma_min, sigma_max = _sigma_bounds(config)
        l_min = math.floor(math.log2(sigma_min))
    l_max = l_min + level_count - 1
    if protocol in ("uv2", "uv1"):
        needed = math.ceil(math.log2(sigma_max))
        if l_max < needed:
            raise ConfigError(
                f"level budget tops out at scale 2^{l_max} but sigma_max needs "
                f"2^{needed}; lower k1 or raise n"
            )
    if l_max > _MAX_TOP_LEVEL:
        raise ConfigError(
            f"top level {l_max} exceeds the floating-point scale budget; "
            f"supply a larger level subgroup size"
        )
    level_plan = LevelPlan(l_min=l_min, l_max=l_max, k=k1, beta=beta, eps=eps)

    if protocol in ("kv2", "uv2"):
        return PartitionPlan(
            protocol=protocol, n=n, eps=eps, beta=beta, k1=k1, level_plan=level_plan,
            u2_start=half, sigma=sigma if protocol == "kv2" else None,
        )

    if protocol == "kv1":
        rho = math.ceil(2.0 * math.sqrt(math.log(4.0 * n)))
        group_keys = tuple(range(1, 5 * rho + 1))
    else:
        rho = math.ceil(math.sqrt(math.log(4.0 * n)) + 6.0)
        group_keys = tuple((j, m) for j in level_plan.levels for m in range(1, rho + 1))
    k2 = config.k2 if config.k2 is not None else half // len(group_keys)
    if k2 < 1:
        raise ConfigError(
            f"n = {n} cannot fill {len(group_keys)} refinement subgroups; raise n"
        )
    if len(group_keys) * k2 > half:
        raise ConfigError(
            f"k2 = {k2} over {len(group_keys)} subgroups exceeds the {half} "
            f"second-half users"
        )
    return PartitionPlan(
        protocol=protocol, n=n, eps=eps, beta=beta, k1=k1, level_plan=level_plan,
        u2_start=half, k2=k2, rho=rho,
        sigma=_known_sigma(config) if protocol == "kv1" else None,
        group_keys=group_keys,
    )


# ---------------------------------------------------------------------------
# Transcript

class Transcript:
    """Ordered record of every privatized message and analyst broadcast.

    Messages are stored columnar per emission block; iteration and
    serialization flatten them in causal order. Floats serialize with
    shortest-roundtrip formatting, so files are byte-stable.
    """

    def __init__(self, protocol: str, n: int):
        self.protocol = protocol
        self.n = n
        self._items: List[tuple] = []
        self.outcome: Optional[EstimateOutcome] = None

    def add_messages(self, round_no: int, subgroup: str, kind: str, users, values) -> None:
        users = np.asarray(users)
        values = np.asarray(values)
        if users.shape != values.shape:
            raise ValueError("users and values must align")
        self._items.append(("messages", round_no, subgroup, kind, users, values))

    def add_broadcast(self, round_no: int, payload: dict) -> None:
        self._items.append(("broadcast", round_no, dict(payload)))

    def set_outcome(self, outcome: EstimateOutcome) -> None:
        self.outcome = outcome

    @property
    def message_count(self) -> int:
        return sum(item[4].shape[0] for item in self._items if item[0] == "messages")

    @property
    def rounds(self) -> set:
        return {item[1] for item in self._items if item[0] == "messages"}

    def user_ids(self) -> np.ndarray:
        blocks = [item[4] for item in self._items if item[0] == "messages"]
        return np.concatenate(blocks) if blocks else np.array([], dtype=np.int64)

    def broadcasts(self) -> List[Tuple[int, dict]]:
        return [(item[1], item[2]) for item in self._items if item[0] == "broadcast"]

    def messages_by_subgroup(self) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
        """Per-subgroup (users, values) in emission order."""
        grouped: Dict[str, Tuple[list, list]] = {}
        for item in self._items:
            if item[0] != "messages":
                continue
            _, _, subgroup, _, users, values = item
            bucket = grouped.setdefault(subgroup, ([], []))
            bucket[0].append(users)
            bucket[1].append(values)
        return {
            tag: (np.concatenate(us), np.concatenate(vs))
            for tag, (us, vs) in grouped.items()
        }

    def validate(self, max_rounds: int) -> None:
        """Sequential interactivity and round-count invariants."""
        ids = self.user_ids()
        if ids.size != np.unique(ids).size:
            raise MalformedInputError("a user sent more than one message")
        if ids.size and (ids.min() < 0 or ids.max() >= self.n):
            raise MalformedInputError("user index outside the population")
        if any(r < 1 or r > max_rounds for r in self.rounds):
            raise MalformedInputError(f"round index outside 1..{max_rounds}")

    def iter_lines(self):
        for item in self._items:
            if item[0] == "broadcast":
                yield {"round": item[1], "broadcast": item[2]}
            else:
                _, round_no, subgroup, kind, users, values = item
                cast = int if kind in ("quad", "sign") else float
                for u, v in zip(users.tolist(), values.tolist()):
                    yield {
                        "round": round_no,
                        "user": int(u),
                        "subgroup": subgroup,
                        "kind": kind,
                        "value": cast(v),
                    }
        if self.outcome is not None:
            yield {"outcome": self.outcome.as_dict()}

    def dumps(self) -> str:
        return "".join(json.dumps(line, separators=(",", ":")) + "\n" for line in self.iter_lines())

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.iter_lines():
                fh.write(json.dumps(line, separators=(",", ":")) + "\n")

    @classmethod
    def loads(cls, text: str, protocol: str, n: int) -> "Transcript":
        transcript = cls(protocol, n)
        pending: Optional[tuple] = None
        for line_no, raw in enumerate(text.splitlines(), start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise MalformedInputError(f"line {line_no}: not valid JSON ({exc})") from exc
            if "outcome" in obj:
                o = obj["outcome"]
                transcript.set_outcome(EstimateOutcome(
                    protocol=o["protocol"], mu_hat1=o["mu_hat1"],
                    sigma_hat=o["sigma_hat"], mu_hat2=o["mu_hat2"],
                ))
                continue
            if "broadcast" in obj:
                if pending is not None:
                    transcript.add_messages(pending[1], pending[2], pending[3], np.array(pending[4]), np.array(pending[5]))
                    pending = None
                transcript.add_broadcast(obj["round"], obj["broadcast"])
                continue
            try:
                key = ("messages", obj["round"], obj["subgroup"], obj["kind"])
                user, value = obj["user"], obj["value"]
            except KeyError as exc:
                raise MalformedInputError(f"line {line_no}: missing field {exc}") from exc
            if pending is not None and pending[:4] == key:
                pending[4].append(user)
                pending[5].append(value)
            else:
                if pending is not None:
                    transcript.add_messages(pending[1], pending[2], pending[3], np.array(pending[4]), np.array(pending[5]))
                pending = ("messages", obj["round"], obj["subgroup"], obj["kind"], [user], [value])
        if pending is not None:
            transcript.add_messages(pending[1], pending[2], pending[3], np.array(pending[4]), np.array(pending[5]))
        return transcript

    @classmethod
    def load(cls, path, protocol: str, n: int) -> "Transcript":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.loads(fh.read(), protocol, n)


# ---------------------------------------------------------------------------
# Analyst-side computations, shared verbatim by the runners and the replay
# path so both produce identical bits from identical reports.

def _quad_hists(plan: PartitionPlan, counts_by_level: Dict[int, np.ndarray]) -> Dict[int, QuadHistogram]:
    return {
        j: QuadHistogram(level_j=j, bins=debias_quad_counts(plan.eps, plan.k1, c), k=plan.k1)
        for j, c in counts_by_level.items()
    }

def _paired_hists(plan: PartitionPlan, counts_by_level: Dict[int, np.ndarray]) -> Dict[int, PairedHistogram]:
    return {
        j: PairedHistogram(
            level_j=j, bins=pair_adjacent_bins(debias_quad_counts(plan.eps, plan.k1, c)), k=plan.k1
        )
        for j, c in counts_by_level.items()
    }


def _analyst_mu1(plan: PartitionPlan, counts_by_level: Dict[int, np.ndarray]) -> float:
    hists = _quad_hists(plan, counts_by_level)
    return est_mean(plan.beta, plan.eps, hists, plan.k1, plan.level_plan)


def _analyst_sigma_hat(plan: PartitionPlan, counts_by_level: Dict[int, np.ndarray]) -> float:
    hists = _paired_hists(plan, counts_by_level)
    return est_var(plan.beta, plan.eps, hists, plan.k1, plan.level_plan)


def _analyst_kv_refine(plan: PartitionPlan, sign_values: np.ndarray, count: int, center: float) -> float:
    hist = SignHistogram(
        bins=debias_sign_counts(plan.eps, count, sign_counts_from_values(sign_values)), k=count
    )
    return refine_known_sigma(hist, count, center, plan.sigma)


def _uv_interval(plan: PartitionPlan, mu1: float, sigma_hat: float) -> Tuple[float, float]:
    half_width = sigma_hat * (2.0 + math.sqrt(math.log(4.0 * plan.n)))
    # A wildly wrong rough estimate can dwarf the width until mu1 - h == mu1
    # + h in floats; keep the interval nonempty so the run completes and the
    # error surfaces in the estimate instead of a crash.
    half_width = max(half_width, 4.0 * math.ulp(abs(mu1)))
    return mu1 - half_width, mu1 + half_width


# ---------------------------------------------------------------------------
# Runners

def _check_samples(config: ProtocolConfig, samples) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape != (config.n,):
        raise ConfigError(f"expected {config.n} samples, got shape {samples.shape}")
    return samples


def _run_level_round(
    plan: PartitionPlan, samples: np.ndarray, streams: TrialStreams, transcript: Transcript
) -> Dict[int, np.ndarray]:
    """Round-one quad randomized response over the per-level blocks of U1."""
    counts = {}
    for level_index, j in enumerate(plan.levels):
        idx = plan.u1_level_indices(level_index)
        draws = streams.matrix(idx, first=2, count=2)
        values = rr1_values(plan.eps, samples[idx], j, draws[:, 0], draws[:, 1])
        transcript.add_messages(1, f"level:{j}", "quad", idx, values)
        counts[j] = quad_counts_from_values(values)
    return counts


def run_kv_two_round(
    config: ProtocolConfig, samples, streams: TrialStreams
) -> Tuple[EstimateOutcome, Transcript]:
    """Known variance, two rounds: level search, then centered sign reports."""
    plan = plan_partition(config, "kv2")
    samples = _check_samples(config, samples)
    transcript = Transcript("kv2", config.n)

    counts = _run_level_round(plan, samples, streams, transcript)
    mu1 = _analyst_mu1(plan, counts)
    transcript.add_broadcast(2, {"mu_hat1": mu1})

    idx2 = plan.u2_indices()
    draws = streams.matrix(idx2, first=2, count=1)
    true_signs = sign_with_positive_zero((samples[idx2] - mu1) / plan.sigma)
    signs = sign_rr_values(plan.eps, true_signs, draws[:, 0])
    transcript.add_messages(2, "refine", "sign", idx2, signs)

    mu2 = _analyst_kv_refine(plan, signs, idx2.size, mu1)
    outcome = EstimateOutcome("kv2", mu1, None, mu2, plan.summary())
    transcript.set_outcome(outcome)
    transcript.validate(max_rounds=2)
    return outcome, transcript


def run_kv_one_round(
    config: ProtocolConfig, samples, streams: TrialStreams
) -> Tuple[EstimateOutcome, Transcript]:
    """Known variance, one round: every message is sent before any analyst
    computation; the refinement subgroups center on staggered lattices and
    the analyst keeps only the one nearest its rough estimate."""
    plan = plan_partition(config, "kv1")
    samples = _check_samples(config, samples)
    transcript = Transcript("kv1", config.n)

    counts = _run_level_round(plan, samples, streams, transcript)
    group_signs: Dict[int, np.ndarray] = {}
    for group_index, m in enumerate(plan.group_keys):
        idx = plan.u2_group_indices(group_index)
        draws = streams.matrix(idx, first=2, count=1)
        lattice = plan.kv1_lattice(m)
        centers = lattice.nearest_points(samples[idx])
        true_signs = sign_with_positive_zero((samples[idx] - centers) / plan.sigma)
        signs = sign_rr_values(plan.eps, true_signs, draws[:, 0])
        transcript.add_messages(1, f"offset:{m}", "sign", idx, signs)
        group_signs[m] = signs

    # Analyst side: nothing above used any analyst output.
    mu1 = _analyst_mu1(plan, counts)
    m_star, s_star = select_subgroup_kv(mu1, {m: plan.kv1_lattice(m) for m in plan.group_keys})
    mu2 = _analyst_kv_refine(plan, group_signs[m_star], plan.k2, s_star)
    summary = plan.summary()
    summary["selected"] = {"subgroup": m_star, "center": s_star}
    outcome = EstimateOutcome("kv1", mu1, None, mu2, summary)
    transcript.set_outcome(outcome)
    transcript.validate(max_rounds=1)
    return outcome, transcript


def run_uv_two_round(
    config: ProtocolConfig, samples, streams: TrialStreams
) -> Tuple[EstimateOutcome, Transcript]:
    """Bounded variance, two rounds: one level round feeds both the scale
    bracket and the rough mean, then clamped noisy values are averaged."""
    plan = plan_partition(config, "uv2")
    samples = _check_samples(config, samples)
    transcript = Transcript("uv2", config.n)

    counts = _run_level_round(plan, samples, streams, transcript)
    sigma_hat = _analyst_sigma_hat(plan, counts)
    mu1 = _analyst_mu1(plan, counts)
    lo, hi = _uv_interval(plan, mu1, sigma_hat)
    transcript.add_broadcast(2, {"interval_lo": lo, "interval_hi": hi})

    idx2 = plan.u2_indices()
    draws = streams.matrix(idx2, first=2, count=1)
    values = uv_rr2_values(plan.eps, samples[idx2], lo, hi, draws[:, 0])
    transcript.add_messages(2, "refine", "real", idx2, values)

    mu2 = (2.0 / plan.n) * float(np.sum(values))
    outcome = EstimateOutcome("uv2", mu1, sigma_hat, mu2, plan.summary())
    transcript.set_outcome(outcome)
    transcript.validate(max_rounds=2)
    return outcome, transcript


def run_uv_one_round(
    config: ProtocolConfig, samples, streams: TrialStreams
) -> Tuple[EstimateOutcome, Transcript]:
    """Bounded variance, one round: refinement subgroups cover every
    (scale, offset) pair so the analyst can pick the right one afterwards."""
    plan = plan_partition(config, "uv1")
    samples = _check_samples(config, samples)
    transcript = Transcript("uv1", config.n)

    counts = _run_level_round(plan, samples, streams, transcript)
    group_values: Dict[tuple, np.ndarray] = {}
    for group_index, (level, m) in enumerate(plan.group_keys):
        idx = plan.u2_group_indices(group_index)
        draws = streams.matrix(idx, first=2, count=1)
        values = one_round_uv_rr2_values(
            plan.eps, samples[idx], plan.uv1_lattice(level, m),
            plan.uv1_noise_numerator(level), draws[:, 0],
        )
        transcript.add_messages(1, f"lattice:{level}:{m}", "real", idx, values)
        group_values[(level, m)] = values

    sigma_hat = _analyst_sigma_hat(plan, counts)
    mu1 = _analyst_mu1(plan, counts)
    j1, m2, s_star = select_subgroup_uv(sigma_hat, mu1, plan.level_plan, plan.rho)
    mu2 = s_star + float(np.sum(group_values[(j1, m2)])) / plan.k2
    summary = plan.summary()
    summary["selected"] = {"level": j1, "subgroup": m2, "center": s_star}
    outcome = EstimateOutcome("uv1", mu1, sigma_hat, mu2, summary)
    transcript.set_outcome(outcome)
    transcript.validate(max_rounds=1)
    return outcome, transcript


RUNNERS = {
    "kv2": run_kv_two_round,
    "kv1": run_kv_one_round,
    "uv2": run_uv_two_round,
    "uv1": run_uv_one_round,
}


# ---------------------------------------------------------------------------
# Replay: analyst outputs from transcript plus public configuration alone.

def _collect_level_counts(plan: PartitionPlan, groups) -> Dict[int, np.ndarray]:
    counts = {}
    for j in plan.levels:
        tag = f"level:{j}"
        if tag not in groups:
            raise MalformedInputError(f"transcript lacks messages for {tag}")
        users, values = groups[tag]
        if users.size != plan.k1:
            raise MalformedInputError(
                f"{tag} carries {users.size} messages, expected {plan.k1}"
            )
        counts[j] = quad_counts_from_values(values.astype(np.int64))
    return counts


def replay_analyst(protocol: str, config: ProtocolConfig, transcript: Transcript) -> EstimateOutcome:
    """Recompute every analyst output from the transcript and public config.

    Raises MalformedInputError for structurally broken transcripts and
    ReplayMismatch when a recorded broadcast or outcome diverges from the
    recomputation.
    """
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {protocol!r}")
    plan = plan_partition(config, protocol)
    transcript.validate(max_rounds=2 if protocol in ("kv2", "uv2") else 1)
    groups = transcript.messages_by_subgroup()
    counts = _collect_level_counts(plan, groups)
    broadcasts = dict(transcript.broadcasts())

    def check(name, recorded, recomputed):
        if recorded != recomputed:
            raise ReplayMismatch(name, recorded, recomputed)

    mu1 = _analyst_mu1(plan, counts)

    if protocol == "kv2":
        if 2 in broadcasts:
            check("broadcast mu_hat1", broadcasts[2].get("mu_hat1"), mu1)
        users, signs = groups.get("refine", (np.array([]), np.array([])))
        if users.size != plan.n - plan.u2_start:
            raise MalformedInputError("refinement round is missing messages")
        mu2 = _analyst_kv_refine(plan, signs.astype(np.int64), users.size, mu1)
        recomputed = EstimateOutcome("kv2", mu1, None, mu2, plan.summary())
    elif protocol == "kv1":
        m_star, s_star = select_subgroup_kv(
            mu1, {m: plan.kv1_lattice(m) for m in plan.group_keys}
        )
        tag = f"offset:{m_star}"
        if tag not in groups or groups[tag][0].size != plan.k2:
            raise MalformedInputError(f"selected subgroup {tag} incomplete in transcript")
        mu2 = _analyst_kv_refine(plan, groups[tag][1].astype(np.int64), plan.k2, s_star)
        recomputed = EstimateOutcome("kv1", mu1, None, mu2, plan.summary())
    elif protocol == "uv2":
        sigma_hat = _analyst_sigma_hat(plan, counts)
        lo, hi = _uv_interval(plan, mu1, sigma_hat)
        if 2 in broadcasts:
            check("broadcast interval_lo", broadcasts[2].get("interval_lo"), lo)
            check("broadcast interval_hi", broadcasts[2].get("interval_hi"), hi)
        users, values = groups.get("refine", (np.array([]), np.array([])))
        if users.size != plan.n - plan.u2_start:
            raise MalformedInputError("refinement round is missing messages")
        mu2 = (2.0 / plan.n) * float(np.sum(values.astype(np.float64)))
        recomputed = EstimateOutcome("uv2", mu1, sigma_hat, mu2, plan.summary())
    else:
        sigma_hat = _analyst_sigma_hat(plan, counts)
        j1, m2, s_star = select_subgroup_uv(sigma_hat, mu1, plan.level_plan, plan.rho)
        tag = f"lattice:{j1}:{m2}"
        if tag not in groups or groups[tag][0].size != plan.k2:
            raise MalformedInputError(f"selected subgroup {tag} incomplete in transcript")
        mu2 = s_star + float(np.sum(groups[tag][1].astype(np.float64))) / plan.k2
        recomputed = EstimateOutcome("uv1", mu1, sigma_hat, mu2, plan.summary())

    if transcript.outcome is not None:
        for name in ("protocol", "mu_hat1", "sigma_hat", "mu_hat2"):
            check(name, getattr(transcript.outcome, name), getattr(recomputed, name))
    return recomputed
