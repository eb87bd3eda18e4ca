"""Deterministic source-level fault injection.

A :class:`FaultPlan` says how many errors to inject, how far apart (one every
``interval_k`` verification intervals), what kind, and with which seed.
:func:`arm` turns a plan into an :class:`Injector` handle and registers it for
its target routine; the FT routines pick the handle up from the registry (or
take it as an explicit ``injector=`` argument).

DMR routines see the injector through :func:`_seam`, a compiled hook that the
*primary* evaluation of every interval passes through and that the shadow
evaluation never touches. With nothing armed the hook is one length check.
ABFT routines call :meth:`Injector.abft_fire` at every rank-K_C boundary,
which goes through :func:`perturb_abft`.

Firing points: injection ``r`` (0-based) fires at iteration
``(r // burst + 1) * interval_k - 1``, so ``burst > 1`` puts several errors in
the same interval.
"""
from __future__ import annotations

import threading
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from .errors import ConflictingPlan

KINDS = ("bitflip", "additive", "sticky")
SIDES = ("dmr_primary", "abft_c_entry")
RNG_ALGORITHM = "PCG64"
ABFT_AUTO_SCALE = 1.0e3

_KIND_CODE = {"bitflip": 0, "additive": 1, "sticky": 1}


@dataclass(frozen=True)
class FaultPlan:
    """Where, when and how to inject.

    ``delta`` is the additive magnitude; ``None`` means 1.0 on the DMR side
    and ``10**3 * tau`` of the hit entry on the ABFT side.
    """

    target: str
    count: int = 20
    interval_k: int = 1
    seed: int = 0
    kind: str = "additive"
    delta: float | None = None
    side: str = "dmr_primary"
    burst: int = 1

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("count must be >= 0")
        if self.interval_k < 1:
            raise ValueError("interval_k must be >= 1")
        if self.burst < 1:
            raise ValueError("burst must be >= 1")
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.side not in SIDES:
            raise ValueError(f"side must be one of {SIDES}")
        if self.kind == "sticky" and self.side != "dmr_primary":
            raise ValueError("sticky faults only apply to the DMR primary path")

    def firing_iterations(self) -> np.ndarray:
        r = np.arange(self.count, dtype=np.int64)
        return (r // self.burst + 1) * self.interval_k - 1


@dataclass(frozen=True)
class InjectionRecord:
    iteration: int
    site: tuple
    original: float
    perturbed: float


def _hexbits(v: float) -> str:
    return "0x%016x" % (np.float64(v).view(np.uint64).item())


def _unhexbits(s: str) -> float:
    return float(np.uint64(int(s, 16)).view(np.float64))


@dataclass
class InjectionLog:
    """Ordered record of fired injections, replayable from its header."""

    seed: int
    algorithm: str = RNG_ALGORITHM
    plan: dict = field(default_factory=dict)
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def dumps(self) -> str:
        lines = [f"# seed={self.seed}", f"# algorithm={self.algorithm}"]
        lines += [f"# plan.{k}={v}" for k, v in self.plan.items()]
        lines.append("# iteration site original perturbed")
        for r in self.records:
            site = ",".join(str(s) for s in r.site)
            lines.append(f"{r.iteration} {site} {_hexbits(r.original)} {_hexbits(r.perturbed)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "InjectionLog":
        seed, algorithm, plan, records = 0, RNG_ALGORITHM, {}, []
        for line in text.splitlines():
            if not line.strip():
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("seed="):
                    seed = int(body[5:])
                elif body.startswith("algorithm="):
                    algorithm = body[10:]
                elif body.startswith("plan."):
                    k, v = body[5:].split("=", 1)
                    plan[k] = v
                continue
            it, site, orig, pert = line.split()
            records.append(InjectionRecord(int(it), tuple(int(s) for s in site.split(",")),
                                           _unhexbits(orig), _unhexbits(pert)))
        return cls(seed, algorithm, plan, records)


# --------------------------------------------------------------------------
# compiled seam


@njit(cache=True, nogil=True)
def _perturb_value(v, kind, bit, delta):
    if kind == 0:
        a = np.empty(1)
        a[0] = v
        ai = a.view(np.int64)
        ai[0] = ai[0] ^ (np.int64(1) << bit)
        return a[0]
    return v + delta


@njit(cache=True, nogil=True)
def _seam(out, o0, size, t, inj):
    """Perturb ``out[o0:o0+size]`` if an injection is scheduled at iteration t.

    ``inj`` = (sched_t, sched_u, sched_bit, sched_delta, fired, params,
    log_t, log_site, log_orig, log_pert, log_n) with params = [kind, sticky].
    Returns the number of values perturbed.
    """
    st = inj[0]
    ns = st.shape[0]
    if ns == 0:
        return 0
    k = np.searchsorted(st, t)
    fired = 0
    sticky = inj[5][1] == 1
    while k < ns and st[k] == t:
        if sticky or not inj[4][k]:
            inj[4][k] = True
            lane = int(inj[1][k] * size)
            if lane >= size:
                lane = size - 1
            orig = out[o0 + lane]
            newv = _perturb_value(orig, inj[5][0], inj[2][k], inj[3][k])
            out[o0 + lane] = newv
            n = inj[10][0]
            if n < inj[6].shape[0]:
                inj[6][n] = t
                inj[7][n] = lane
                inj[8][n] = orig
                inj[9][n] = newv
                inj[10][0] = n + 1
            fired += 1
        k += 1
    return fired


def _pack_schedule(t, u, bit, delta, kind, sticky, log_cap):
    return (
        np.ascontiguousarray(t, dtype=np.int64),
        np.ascontiguousarray(u, dtype=np.float64),
        np.ascontiguousarray(bit, dtype=np.int64),
        np.ascontiguousarray(delta, dtype=np.float64),
        np.zeros(len(t), dtype=np.bool_),
        np.array([kind, 1 if sticky else 0], dtype=np.int64),
        np.zeros(log_cap, dtype=np.int64),
        np.zeros(log_cap, dtype=np.int64),
        np.zeros(log_cap, dtype=np.float64),
        np.zeros(log_cap, dtype=np.float64),
        np.zeros(1, dtype=np.int64),
    )


def disarmed_seam():
    """A seam tuple with an empty schedule (the zero-cost path)."""
    return _pack_schedule([], [], [], [], 0, False, 0)


# --------------------------------------------------------------------------
# python-level perturbation primitives


def perturb_dmr(block, plan: FaultPlan, rng: np.random.Generator, *,
                lane: int | None = None, bit: int | None = None) -> np.ndarray:
    """Return a copy of ``block`` with one lane perturbed according to ``plan``.

    bitflip flips one uniformly chosen bit among the 52 mantissa and 11
    exponent bits; additive/sticky add ``plan.delta`` (default 1.0).
    ``lane`` and ``bit`` pin the otherwise random choices.
    """
    out = np.array(block, dtype=np.float64, copy=True)
    draw_lane, draw_bit = int(rng.integers(out.size)), int(rng.integers(63))
    lane = draw_lane if lane is None else lane
    bit = draw_bit if bit is None else bit
    delta = 1.0 if plan.delta is None else float(plan.delta)
    out[lane] = _perturb_value(out[lane], _KIND_CODE[plan.kind], bit, delta)
    return out


def perturb_abft(C, interval: int, plan: FaultPlan, rng: np.random.Generator, *,
                 state=None, c_tol: float = 64.0, log: InjectionLog | None = None,
                 rows: tuple[int, int] | None = None):
    """Add an error to one uniformly chosen entry of C at a rank-K_C boundary.

    The corrupted value stands for a faulty result coming out of the compute
    units, so when the fused checksum ``state`` is given its reference
    accumulators (which are built from the same register values) see the
    corruption too. ``rows`` limits the choice to a row band (threaded runs).
    Returns the (i, j, delta) that was applied.
    """
    m, n = C.shape
    r0, r1 = rows if rows is not None else (0, m)
    i = r0 + int(rng.integers(r1 - r0))
    j = int(rng.integers(n))
    if plan.delta is not None:
        delta = float(plan.delta)
    else:
        delta = 1.0 if state is None else ABFT_AUTO_SCALE * state.tau_at(i, j, c_tol)
    orig = float(C[i, j])
    C[i, j] = orig + delta
    if state is not None:
        state.absorb_fault(i, j, orig, C[i, j])
    if log is not None:
        log.records.append(InjectionRecord(int(interval), (i, j), orig, float(C[i, j])))
    return i, j, delta


# --------------------------------------------------------------------------
# injector handle and registry

_registry: dict[str, "Injector"] = {}
_registry_lock = threading.Lock()


class Injector:
    """Armed plan: schedule, PRNG, and the growing :class:`InjectionLog`."""

    def __init__(self, plan: FaultPlan, seed_seq: np.random.SeedSequence | None = None):
        self.plan = plan
        self._seed_seq = seed_seq if seed_seq is not None else np.random.SeedSequence(plan.seed)
        self.rng = np.random.Generator(np.random.PCG64(self._seed_seq))
        self.log = InjectionLog(seed=plan.seed, plan={k: v for k, v in asdict(self.plan).items()})
        self.armed = False
        self._lock = threading.Lock()
        self.schedule = plan.firing_iterations()
        self._abft_cursor = 0
        n = len(self.schedule)
        if plan.side == "dmr_primary":
            u = self.rng.random(n)
            bit = self.rng.integers(0, 63, n)
            delta = np.full(n, 1.0 if plan.delta is None else float(plan.delta))
            cap = 2 * n + 8 if plan.kind == "sticky" else n
            self._seam = _pack_schedule(self.schedule, u, bit, delta, _KIND_CODE[plan.kind],
                                        plan.kind == "sticky", cap)
        else:
            self._seam = disarmed_seam()
        self._synced = 0

    # -- DMR side ----------------------------------------------------------
    def seam_tuple(self):
        return self._seam if self.plan.side == "dmr_primary" else disarmed_seam()

    def seam(self, out: np.ndarray, iteration: int) -> int:
        """Apply the compiled seam to a Python-side output buffer."""
        out = np.ascontiguousarray(out)
        n = _seam(out, 0, out.size, int(iteration), self.seam_tuple())
        self.sync()
        return n

    def sync(self):
        """Copy newly fired seam records into :attr:`log`."""
        if self.plan.side != "dmr_primary":
            return
        s = self._seam
        n = int(s[10][0])
        for q in range(self._synced, n):
            self.log.records.append(
                InjectionRecord(int(s[6][q]), (int(s[7][q]),), float(s[8][q]), float(s[9][q])))
        self._synced = n

    # -- ABFT side ---------------------------------------------------------
    def abft_fire(self, C, interval: int, *, state=None, c_tol: float = 64.0, rows=None) -> list:
        """Fire every injection scheduled for ``interval``; returns their sites."""
        if self.plan.side != "abft_c_entry":
            return []
        sites = []
        with self._lock:
            while self._abft_cursor < len(self.schedule) and self.schedule[self._abft_cursor] < interval:
                self._abft_cursor += 1
            while self._abft_cursor < len(self.schedule) and self.schedule[self._abft_cursor] == interval:
                sites.append(perturb_abft(C, interval, self.plan, self.rng, state=state,
                                          c_tol=c_tol, log=self.log, rows=rows))
                self._abft_cursor += 1
        return sites

    # -- accounting --------------------------------------------------------
    @property
    def requested(self) -> int:
        return self.plan.count

    @property
    def fired(self) -> int:
        self.sync()
        if self.plan.side == "dmr_primary":
            return int(np.count_nonzero(self._seam[4]))
        return len(self.log)

    @property
    def surplus(self) -> int:
        return self.requested - self.fired

    def report_surplus(self, available: int):
        """Warn when the routine had fewer intervals than the plan asked for."""
        if self.surplus > 0:
            warnings.warn(
                f"{self.plan.target}: {self.surplus} of {self.requested} injections not fired "
                f"({available} intervals available)", RuntimeWarning, stacklevel=3)

    def split(self, parts: int) -> list["Injector"]:
        """Independent per-thread sub-injectors (count split, seed spawned by index)."""
        children = self._seed_seq.spawn(parts)
        out = []
        for idx in range(parts):
            cnt = self.plan.count // parts + (1 if idx < self.plan.count % parts else 0)
            sub = FaultPlan(**{**asdict(self.plan), "count": cnt})
            out.append(Injector(sub, children[idx]))
        return out

    # -- registry ----------------------------------------------------------
    def disarm(self):
        with _registry_lock:
            if _registry.get(self.plan.target) is self:
                del _registry[self.plan.target]
        self.armed = False

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.disarm()


def arm(plan: FaultPlan) -> Injector:
    """Register ``plan`` for its target routine and return the handle."""
    with _registry_lock:
        if plan.target in _registry:
            raise ConflictingPlan(f"a plan is already armed for {plan.target!r}")
        inj = Injector(plan)
        inj.armed = True
        _registry[plan.target] = inj
    return inj


def armed(target: str) -> Injector | None:
    return _registry.get(target)


def resolve(target: str, injector: Injector | None) -> Injector | None:
    return injector if injector is not None else armed(target)
