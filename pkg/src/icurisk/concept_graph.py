"""Diagnosis-code hierarchy graph and its two-layer graph convolution.

ICD leaf codes hang off a chain of up to three CCS grouping levels.  The
chains form a forest; adjacency is symmetrized (parent <-> child) and given
self-loops so the standard degree-normalized propagation applies.  Initial
node features are one-hot identity rows, and the convolution weights train
end-to-end with the rest of the model.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "CodeMapping",
    "ConceptGraph",
    "MappingError",
    "load_mapping",
    "save_mapping",
    "build_graph",
    "gcn_forward",
    "lookup_embeddings",
]

MAX_CCS_LEVELS = 3


class MappingError(ValueError):
    pass


@dataclass
class CodeMapping:
    """ICD code -> ordered CCS ancestor chain (coarsest level first)."""

    icd_to_ccs: dict

    def __post_init__(self):
        for code, chain in self.icd_to_ccs.items():
            if not chain:
                raise MappingError(f"ICD code {code!r} maps to an empty CCS chain")
            for parent, child in zip(chain, chain[1:]):
                if not child.startswith(parent + "."):
                    raise MappingError(
                        f"ICD code {code!r}: CCS level {child!r} does not extend {parent!r}"
                    )

    def chain(self, code: str):
        return self.icd_to_ccs[code]

    def __contains__(self, code: str) -> bool:
        return code in self.icd_to_ccs


def load_mapping(path) -> CodeMapping:
    """Read a tab-separated hierarchy table.

    Columns: ICD code, then (CCS id, CCS label) pairs from level 1 down.
    Labels are carried for human readability and ignored here; levels past
    the third are truncated with a warning.  Lines starting with '#' are
    comments.
    """
    mapping = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            cells = line.split("\t")
            icd = cells[0].strip()
            if not icd:
                raise MappingError(f"{path}:{lineno}: missing ICD code")
            ids = [c.strip() for c in cells[1::2] if c.strip()]
            if len(ids) > MAX_CCS_LEVELS:
                warnings.warn(
                    f"{path}:{lineno}: {icd} has {len(ids)} CCS levels; keeping the first "
                    f"{MAX_CCS_LEVELS}",
                    stacklevel=2,
                )
                ids = ids[:MAX_CCS_LEVELS]
            if icd in mapping:
                raise MappingError(f"{path}:{lineno}: duplicate ICD code {icd!r}")
            mapping[icd] = tuple(ids)
    if not mapping:
        raise MappingError(f"{path}: no mapping rows found")
    return CodeMapping(mapping)


def save_mapping(mapping: CodeMapping, path) -> None:
    with open(path, "w") as fh:
        fh.write("# ICD code\tCCS level ids and labels, coarsest first\n")
        for icd in sorted(mapping.icd_to_ccs):
            cells = [icd]
            for level in mapping.icd_to_ccs[icd]:
                cells.extend([level, f"group {level}"])
            fh.write("\t".join(cells) + "\n")


@dataclass
class ConceptGraph:
    """Forest over CCS groups and ICD leaves, ready for convolution."""

    nodes: tuple
    edges: tuple  # (parent, child) pairs
    adjacency: np.ndarray  # symmetrized, with self-loops
    degree: np.ndarray  # diagonal of the degree matrix
    node_features: np.ndarray  # one-hot identity rows
    chains: dict  # ICD code -> CCS chain actually used
    rejected: tuple = ()
    index: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.index:
            self.index = {name: i for i, name in enumerate(self.nodes)}

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def normalized_adjacency(self) -> np.ndarray:
        inv_sqrt = 1.0 / np.sqrt(self.degree)
        return self.adjacency * inv_sqrt[:, None] * inv_sqrt[None, :]

    def episode_indices(self, codes):
        """Row indices for an episode: its ICD codes and their deduplicated
        CCS ancestors in first-occurrence order."""
        icd_idx, ccs_idx, seen = [], [], set()
        for code in codes:
            if code not in self.chains:
                raise KeyError(f"code {code!r} is not in the concept graph")
            icd_idx.append(self.index[code])
            for anc in self.chains[code]:
                if anc not in seen:
                    seen.add(anc)
                    ccs_idx.append(self.index[anc])
        return np.array(icd_idx, dtype=np.intp), np.array(ccs_idx, dtype=np.intp)


def build_graph(codes, mapping: CodeMapping) -> ConceptGraph:
    """Assemble the forest spanned by the observed ICD codes.

    Codes missing from the mapping are collected into `rejected` and left
    out of the graph; an empty (or fully rejected) code set is an error.
    """
    observed = sorted(set(codes))
    if not observed:
        raise ValueError("cannot build a concept graph from an empty code set")
    accepted = [c for c in observed if c in mapping]
    rejected = tuple(c for c in observed if c not in mapping)
    if not accepted:
        raise ValueError("every observed code was missing from the mapping")

    chains = {c: tuple(mapping.chain(c))[:MAX_CCS_LEVELS] for c in accepted}
    ccs_nodes = sorted({level for chain in chains.values() for level in chain})
    nodes = tuple(ccs_nodes) + tuple(accepted)

    edges, parent_of = [], {}
    for code, chain in sorted(chains.items()):
        path = list(chain) + [code]
        for parent, child in zip(path, path[1:]):
            known = parent_of.setdefault(child, parent)
            if known != parent:
                raise MappingError(
                    f"node {child!r} would get two parents ({known!r} and {parent!r}); "
                    "the hierarchy must be a forest"
                )
            if (parent, child) not in edges:
                edges.append((parent, child))

    index = {name: i for i, name in enumerate(nodes)}
    n = len(nodes)
    adj = np.eye(n)
    for parent, child in edges:
        adj[index[parent], index[child]] = 1.0
        adj[index[child], index[parent]] = 1.0

    return ConceptGraph(
        nodes=nodes,
        edges=tuple(edges),
        adjacency=adj,
        degree=adj.sum(axis=1),
        node_features=np.eye(n),
        chains=chains,
        rejected=rejected,
        index=index,
    )


def gcn_forward(graph: ConceptGraph, w0: Tensor, w1: Tensor) -> Tensor:
    """Two propagation layers with ReLU: rows of the result are node embeddings."""
    norm = Tensor(graph.normalized_adjacency())
    h0 = Tensor(graph.node_features)
    h1 = ad.relu(ad.matmul(ad.matmul(norm, h0), w0))
    return ad.relu(ad.matmul(ad.matmul(norm, h1), w1))


def lookup_embeddings(graph: ConceptGraph, embeddings: Tensor, codes):
    """Embedding rows for an episode's ICD codes and their CCS ancestors.

    Returns (X_icd, X_ccs); both are empty (0, F) tensors for a code-free
    episode, in which case the model substitutes a zero diagnostic feature.
    """
    icd_idx, ccs_idx = graph.episode_indices(codes)
    return ad.take_rows(embeddings, icd_idx), ad.take_rows(embeddings, ccs_idx)
