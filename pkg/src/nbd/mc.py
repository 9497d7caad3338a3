""" 蒙特卡罗

瞬时返回扩散：在 Ω 内按 Euler–Maruyama 扩散，按 c0 被杀死，碰到边界时以概率 μ(z, Ω)
跳回内部（按离散测度 M 的对应行抽样到内部节点，再在格子内抖动），否则死亡。
盒子区域上用布朗桥修正步长之间漏掉的出界。用来和半群 T(t) 做统计交叉检验
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from . import config
from .assembly import NonlocalOperator
from .exceptions import ConfigError, StartOutsideDomain
from .expr import Expr, sample, to_source
from .solver import evolve_refined

logger = logging.getLogger(__name__)

BISECTIONS = 8
# 行质量与 1 的差在该范围内时视为概率测度，粒子不会在边界死亡
FULL_MASS_TOL = 1e-12


@dataclass(frozen=True)
class ProcessConfig:
    dt: float
    n_paths: int
    seed: int
    chunk_size: int = config.MC_CHUNK_SIZE

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError('dt must be positive')
        if self.n_paths < 1:
            raise ConfigError('n_paths must be at least 1')
        if self.chunk_size < 1:
            raise ConfigError('chunk_size must be at least 1')

    @property
    def chunks(self) -> List[Tuple[int, int]]:
        """ [(块编号, 路径数)]
        """
        count = math.ceil(self.n_paths / self.chunk_size)
        return [
            (k, min(self.chunk_size, self.n_paths - k * self.chunk_size))
            for k in range(count)
        ]


@dataclass(frozen=True)
class PathEstimate:
    mean: float
    stderr: float
    alive_fraction: float
    kill_count: int
    return_count: int
    n_paths: int


@dataclass(frozen=True)
class _Chunk:
    positions: np.ndarray
    alive: np.ndarray
    kills: int
    returns: int


def chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    """ 第 chunk 块的随机数流，只依赖 (seed, chunk)
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chunk, )))


def _diffusion_factor(a: np.ndarray) -> np.ndarray:
    """ 2a 的对称平方根 σ，σσ^T = 2a
    """
    w, V = np.linalg.eigh(2 * a)
    return np.einsum('nik,nk,njk->nij', V, np.sqrt(np.clip(w, 0.0, None)), V)


class _Process:
    def __init__(self, op: NonlocalOperator):
        self.op = op
        self.grid = op.grid
        M = op.measure.matrix.tocsr()
        M.sort_indices()
        self.indptr = M.indptr
        self.indices = M.indices
        self.cumulative = np.cumsum(M.data)
        mass = op.measure.row_sums
        self.mass = np.where(mass >= 1 - FULL_MASS_TOL, 1.0, mass)
        domain = self.grid.domain
        self.boxes = domain.indicator is None
        if self.boxes:
            self.lo = np.array([piece.lo for piece in domain.pieces])
            self.hi = np.array([piece.hi for piece in domain.pieces])

    def _piece(self, points):
        """ 每个点所在盒子的编号，不在任何盒子内为 -1
        """
        inside = np.all((points[:, None, :] > self.lo) & (points[:, None, :] < self.hi), axis=2)
        return np.where(inside.any(axis=1), inside.argmax(axis=1), -1)

    def _crossing(self, inside, outside):
        lo, hi = inside, outside
        for _ in range(BISECTIONS):
            mid = 0.5 * (lo + hi)
            ok = self.grid.contains(mid)[:, None]
            lo = np.where(ok, mid, lo)
            hi = np.where(ok, hi, mid)
        return 0.5 * (lo + hi)

    def _box_exits(self, rng, current, proposed, a, dt):
        """ 盒子区域上的出界判断，返回 (是否出界, 出界点)

        终点离开所在盒子时取线段与盒子面的第一个交点；终点仍在盒内时按布朗桥
        估计步长内碰到每个面的概率 exp(-d0 d1 / (a_kk dt))
        """
        piece = self._piece(current)
        lo, hi = self.lo[piece], self.hi[piece]
        left = np.any((proposed <= lo) | (proposed >= hi), axis=1)

        delta = proposed - current
        with np.errstate(divide='ignore', invalid='ignore'):
            to_face = np.where(
                proposed <= lo, (lo - current) / delta,
                np.where(proposed >= hi, (hi - current) / delta, np.inf)
            )
        s = np.clip(to_face.min(axis=1), 0.0, 1.0)
        hit = current + s[:, None] * delta

        diag = np.einsum('nkk->nk', a)
        scale = np.maximum(diag, np.finfo(float).tiny) * dt
        near_lo = np.exp(-np.clip((current - lo) * (proposed - lo), 0.0, None) / scale)
        near_hi = np.exp(-np.clip((hi - current) * (hi - proposed), 0.0, None) / scale)
        probability = 1.0 - np.prod((1.0 - near_lo) * (1.0 - near_hi), axis=1)
        bridged = ~left & (rng.random(len(current)) < probability)

        if np.any(bridged):
            # 取概率最大的面，碰撞点为线段中点投影到该面
            faces = np.concatenate([near_lo[bridged], near_hi[bridged]], axis=1)
            choice = faces.argmax(axis=1)
            d = current.shape[1]
            axis, upper = choice % d, choice >= d
            rows = np.arange(len(choice))
            points = 0.5 * (current[bridged] + proposed[bridged])
            points[rows, axis] = np.where(
                upper, hi[bridged][rows, axis], lo[bridged][rows, axis]
            )
            hit[bridged] = points

        return left | bridged, hit

    def _exits(self, rng, current, proposed, a, dt):
        if self.boxes:
            return self._box_exits(rng, current, proposed, a, dt)
        outside = ~self.grid.contains(proposed)
        hit = proposed.copy()
        if np.any(outside):
            hit[outside] = self._crossing(current[outside], proposed[outside])
        return outside, hit

    def _resample(self, rng, rows):
        """ 按 M 的行抽一个内部节点，再在它的格子内均匀抖动；抖出区域时留在节点上
        """
        start, stop = self.indptr[rows], self.indptr[rows + 1]
        before = np.where(start > 0, self.cumulative[np.maximum(start - 1, 0)], 0.0)
        target = before + rng.random(len(rows)) * (self.cumulative[stop - 1] - before)
        picked = np.clip(np.searchsorted(self.cumulative, target, side='right'), start, stop - 1)
        nodes = self.grid.interior_coords[self.indices[picked]]
        points = nodes + (rng.random(nodes.shape) - 0.5) * np.asarray(self.grid.h)
        inside = self.grid.contains(points)
        return np.where(inside[:, None], points, nodes)

    def run_chunk(self, cfg: ProcessConfig, x0, t: float, chunk: int, size: int) -> _Chunk:
        rng = chunk_rng(cfg.seed, chunk)
        steps = max(1, math.ceil(t / cfg.dt - 1e-12))
        dt = t / steps
        coefficients = self.op.dirichlet.coefficients

        X = np.tile(np.asarray(x0, dtype=float), (size, 1))
        alive = np.ones(size, dtype=bool)
        kills = returns = 0

        for _ in range(steps):
            idx = np.flatnonzero(alive)
            if idx.size == 0:
                break
            current = X[idx]
            a, b, c0 = coefficients.sample(current)

            if np.any(c0 != 0):
                # 常数 c0 时在一个步长内精确的死亡概率
                die = rng.random(idx.size) < -np.expm1(c0 * dt)
                alive[idx[die]] = False
                kills += int(die.sum())
                idx, current, a, b = idx[~die], current[~die], a[~die], b[~die]
                if idx.size == 0:
                    continue

            noise = rng.standard_normal(current.shape)
            step = b * dt + math.sqrt(dt) * np.einsum('nij,nj->ni', _diffusion_factor(a), noise)
            proposed = current + step
            exited, hit = self._exits(rng, current, proposed, a, dt)

            if np.any(exited):
                rows = self.grid.nearest_boundary(hit[exited])
                back = rng.random(len(rows)) < self.mass[rows]
                landing = proposed[exited]
                if np.any(back):
                    landing[back] = self._resample(rng, rows[back])
                proposed[exited] = landing
                lost = idx[exited][~back]
                alive[lost] = False
                kills += lost.size
                returns += int(back.sum())

            X[idx] = proposed

        return _Chunk(X, alive, kills, returns)


def _run(op: NonlocalOperator, cfg: ProcessConfig, x0, t: float) -> List[_Chunk]:
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.size != op.grid.dimension or not op.grid.contains(x0)[0]:
        raise StartOutsideDomain(f'starting point {tuple(x0)} is not inside the domain')
    if not t > 0:
        raise ConfigError('t must be positive')

    process = _Process(op)
    chunks = cfg.chunks
    workers = max(1, min(config.THREADS, len(chunks)))
    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = [
            executor.submit(process.run_chunk, cfg, x0, t, k, size) for k, size in chunks
        ]
        # 按块编号顺序归约
        return [future.result() for future in futures]


def simulate_ensemble(
    op: NonlocalOperator, cfg: ProcessConfig, x0, t: float, f: Expr
) -> PathEstimate:
    """ 估计 E[f(X_t); t < ζ]，死亡路径记为 0
    """
    results = _run(op, cfg, x0, t)
    total = total_sq = 0.0
    alive = kills = returns = 0
    for chunk in results:
        values = sample(f, chunk.positions[chunk.alive]) if chunk.alive.any() else np.zeros(0)
        total += float(values.sum())
        total_sq += float((values**2).sum())
        alive += int(chunk.alive.sum())
        kills += chunk.kills
        returns += chunk.returns

    n = cfg.n_paths
    mean = total / n
    variance = max(total_sq / n - mean**2, 0.0) * n / (n - 1) if n > 1 else 0.0
    estimate = PathEstimate(
        mean=mean,
        stderr=math.sqrt(variance / n),
        alive_fraction=alive / n,
        kill_count=kills,
        return_count=returns,
        n_paths=n,
    )
    logger.debug(
        f'ensemble x0={tuple(np.atleast_1d(x0))} t={t}: mean {estimate.mean:.6g} '
        f'± {estimate.stderr:.3g}, alive {estimate.alive_fraction:.4f}, '
        f'{returns} return(s), {kills} kill(s)'
    )
    return estimate


def occupation_histogram(op: NonlocalOperator, cfg: ProcessConfig, x0, t: float) -> np.ndarray:
    """ 存活粒子在内部节点格子上的归一化计数
    """
    counts = np.zeros(op.n)
    for chunk in _run(op, cfg, x0, t):
        if chunk.alive.any():
            nodes = op.grid.nearest_interior(chunk.positions[chunk.alive])
            counts += np.bincount(nodes, minlength=op.n)
    total = counts.sum()
    return counts / total if total > 0 else counts


@dataclass(frozen=True)
class Comparison:
    x0: Tuple[float, ...]
    t: float
    f: str
    estimate: PathEstimate
    pde: float
    z: float


@dataclass(frozen=True)
class ComparisonReport:
    items: Tuple[Comparison, ...]

    @property
    def max_abs_z(self):
        return max(abs(item.z) for item in self.items)

    def exceedances(self, limit=4.0):
        return [item for item in self.items if abs(item.z) > limit]


def pde_value(op: NonlocalOperator, x0, t: float, f: Expr, rtol=0.005) -> float:
    """ (T(t) f)(x0)：步长减半到 rtol 后做 Richardson 外推，再多线性插值
    """
    u0 = sample(f, op.grid.interior_coords)
    snapshots, _ = evolve_refined(op, u0, [t], rtol=rtol, extrapolate=True)
    return op.grid.interpolate(op.extend(snapshots[0]), np.atleast_1d(x0))


def z_score(mean, stderr, pde, tol=1e-9):
    if stderr > 0:
        return (mean - pde) / stderr
    # 两边都是确定值时只比较是否相等
    return 0.0 if abs(mean - pde) <= tol else math.copysign(math.inf, mean - pde)


def mc_vs_pde(
    op: NonlocalOperator, cfg: ProcessConfig, battery: Sequence[Tuple[Sequence[float], float, Expr]]
) -> ComparisonReport:
    if not battery:
        raise ConfigError('the comparison battery is empty')
    items = []
    for x0, t, f in battery:
        estimate = simulate_ensemble(op, cfg, x0, t, f)
        pde = pde_value(op, x0, t, f)
        z = z_score(estimate.mean, estimate.stderr, pde)
        items.append(
            Comparison(tuple(np.atleast_1d(x0).tolist()), float(t), to_source(f), estimate, pde, z)
        )
        logger.info(
            f'x0={items[-1].x0} t={t} f={items[-1].f}: MC {estimate.mean:.6g} '
            f'± {estimate.stderr:.3g}, PDE {pde:.6g}, z={z:.3g}'
        )
    report = ComparisonReport(tuple(items))
    if report.exceedances():
        logger.warning(f'{len(report.exceedances())} item(s) with |z| > 4')
    return report
