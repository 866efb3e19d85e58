"""Existence of the constrained MLE.

The MLE exists uniquely when, for every split of the subjects into two
nonempty groups, someone in the first group beat someone in the second at
least once.  That is exactly strong connectivity of the *defeat digraph*
(edge ``a -> b`` whenever ``a`` beat ``b``), which is decided in linear time
through its strongly connected components.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .dataset import ComparisonDataset
from .models import LinkModel

_FAR = 1e4
_VANISH_LOG = -100.0


@dataclass(frozen=True, eq=False)
class DefeatDigraph:
    n: int
    src: np.ndarray
    dst: np.ndarray
    tie_edges: bool = True

    @property
    def edges(self) -> set[tuple[int, int]]:
        return set(zip(self.src.tolist(), self.dst.tolist()))


@dataclass
class ExistenceVerdict:
    """``witness`` is a set of subjects that never beat anyone outside it
    (``direction="no_defeat_out"``) or never lost to anyone outside it
    (``"no_defeat_in"``)."""

    holds: bool
    n_components: int
    witness: list[int] | None = None
    direction: str | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self, one_based: bool = True) -> dict:
        off = 1 if one_based else 0
        return {
            "holds": self.holds,
            "components": self.n_components,
            "witness": None if self.witness is None else [w + off for w in self.witness],
            "direction": self.direction,
            **self.meta,
        }


def _vanishes(model: LinkModel, x: np.ndarray, direction: float) -> np.ndarray:
    # f(x; y) -> 0 as y -> direction * inf, probed far out in log space
    far = direction * _FAR * model.scale
    with np.errstate(all="ignore"):
        return model.logpdf(x, np.full(x.shape, far)) < _VANISH_LOG


def defeat_digraph(dataset: ComparisonDataset, tie_edges: bool = True,
                   model: LinkModel | None = None) -> DefeatDigraph:
    """Deduplicated defeat edges.

    Without a model, ``x > 0`` gives ``i -> j``, ``x < 0`` gives ``j -> i`` and
    ties give both edges when ``tie_edges`` is set.  With a model the rule is
    the one the existence argument actually needs: a record yields ``i -> j``
    when its density vanishes as ``u_i - u_j -> -inf`` and ``j -> i`` when it
    vanishes as ``u_i - u_j -> +inf``.  For win/loss outcomes the two rules
    coincide; Davidson and Rao-Kupper ties and every Normal observation
    bind both directions.
    """
    i, j, x = dataset.i, dataset.j, dataset.x
    if model is not None:
        fwd = _vanishes(model, x, -1.0)
        back = _vanishes(model, x, +1.0)
        if not tie_edges:
            fwd &= x != 0
            back &= x != 0
        src = [i[fwd], j[back]]
        dst = [j[fwd], i[back]]
    else:
        win, loss, tie = x > 0, x < 0, x == 0
        src = [i[win], j[loss]]
        dst = [j[win], i[loss]]
        if tie_edges:
            src += [i[tie], j[tie]]
            dst += [j[tie], i[tie]]
    src = np.concatenate(src)
    dst = np.concatenate(dst)
    if src.size:
        key = np.unique(src.astype(np.int64) * dataset.n + dst)
        src, dst = np.divmod(key, dataset.n)
    return DefeatDigraph(dataset.n, src.astype(np.int64), dst.astype(np.int64), tie_edges)


def _components(g: DefeatDigraph) -> tuple[int, np.ndarray]:
    adj = coo_matrix((np.ones(g.src.size), (g.src, g.dst)), shape=(g.n, g.n)).tocsr()
    return connected_components(adj, directed=True, connection="strong")


def check_condition1(dataset: ComparisonDataset, tie_edges: bool = True,
                     model: LinkModel | None = None) -> ExistenceVerdict:
    """Decide the partition condition via strongly connected components.

    When it fails, the witness is a source component of the condensation: no
    subject outside it ever beat a subject inside.  Among several sources the
    one holding the smallest subject id is chosen.
    """
    if dataset.n < 2:
        raise ValueError("need at least two subjects")
    g = defeat_digraph(dataset, tie_edges, model)
    ncomp, labels = _components(g)
    meta = {"tie_edges": tie_edges, "model_edges": model is not None}
    if ncomp == 1:
        return ExistenceVerdict(True, 1, meta=meta)
    cross = labels[g.src] != labels[g.dst]
    has_incoming = np.zeros(ncomp, dtype=bool)
    has_incoming[labels[g.dst[cross]]] = True
    first_member = np.full(ncomp, dataset.n)
    np.minimum.at(first_member, labels, np.arange(dataset.n))
    sources = np.flatnonzero(~has_incoming)
    src_comp = sources[np.argmin(first_member[sources])]
    witness = np.flatnonzero(labels == src_comp).tolist()
    return ExistenceVerdict(False, int(ncomp), witness=witness, direction="no_defeat_in", meta=meta)


def brute_force_condition1(dataset: ComparisonDataset, tie_edges: bool = True,
                           model: LinkModel | None = None) -> bool:
    """Enumerate all ``2^n - 2`` proper subsets; a test oracle for small ``n``."""
    n = dataset.n
    if n > 20:
        raise ValueError("brute force refused for n > 20")
    g = defeat_digraph(dataset, tie_edges, model)
    masks = np.arange(1, (1 << n) - 1, dtype=np.int64)
    crossed = np.zeros(masks.size, dtype=bool)
    for a, b in zip(g.src.tolist(), g.dst.tolist()):
        in_a = (masks >> a) & 1
        in_b = (masks >> b) & 1
        crossed |= (in_a == 1) & (in_b == 0)
    return bool(crossed.all())


def witness_is_valid(dataset: ComparisonDataset, verdict: ExistenceVerdict,
                     tie_edges: bool = True, model: LinkModel | None = None) -> bool:
    """True when the verdict's witness really is a violating partition."""
    if verdict.holds or not verdict.witness:
        return False
    inside = np.zeros(dataset.n, dtype=bool)
    inside[verdict.witness] = True
    if inside.all():
        return False
    g = defeat_digraph(dataset, tie_edges, model)
    if verdict.direction == "no_defeat_in":
        return not np.any(~inside[g.src] & inside[g.dst])
    return not np.any(inside[g.src] & ~inside[g.dst])
