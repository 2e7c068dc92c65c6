"""Diagnosis codes: hierarchy graph, convolution embeddings, attention pooling.

ICD leaf codes hang off CCS grouping levels; a two-layer graph convolution
over the symmetrically normalized adjacency embeds every node, and each
episode's ICD embeddings query their CCS ancestors to produce one pooled
diagnostic feature vector.

Run:  python3 demos/04_diagnosis_graph_attention.py
"""

import numpy as np

from icurisk.attention import attend
from icurisk.autodiff import Tensor
from icurisk.concept_graph import CodeMapping, build_graph, gcn_forward, lookup_embeddings

mapping = CodeMapping(
    {
        "5761": ("9", "9.7", "9.7.6"),    # biliary tract disease family
        "5762": ("9", "9.7", "9.7.6"),
        "V1009": ("2", "2.2", "2.2.5"),   # gastrointestinal neoplasm family
        "4280": ("7", "7.2"),             # circulatory family, two levels
    }
)

graph = build_graph(["5761", "5762", "V1009", "4280"], mapping)
print("nodes:", graph.nodes)
print("edges:", graph.edges)
print("degrees:", graph.degree.astype(int).tolist())

norm = graph.normalized_adjacency()
print("normalized adjacency is symmetric:", np.allclose(norm, norm.T))

rng = np.random.default_rng(0)
w0 = Tensor(rng.normal(size=(graph.n_nodes, 8)) * 0.5)
w1 = Tensor(rng.normal(size=(8, 4)) * 0.5)
embeddings = gcn_forward(graph, w0, w1)
print("embedding matrix:", embeddings.shape, "(one row per node)")

# An episode with two biliary codes: queries are the ICD rows, keys/values
# are the deduplicated CCS ancestor rows.
x_icd, x_ccs = lookup_embeddings(graph, embeddings, ["5761", "5762"])
print("episode ICD rows:", x_icd.shape, " CCS ancestor rows:", x_ccs.shape)

h_diag = attend(x_icd, x_ccs)
print("pooled diagnostic feature:", np.round(h_diag.data, 4))

# The pooled vector is a convex combination of ancestor embeddings, so it
# stays inside their coordinate-wise range.
lo, hi = x_ccs.data.min(axis=0), x_ccs.data.max(axis=0)
print("inside ancestor hull:", bool(np.all(h_diag.data >= lo - 1e-12) and np.all(h_diag.data <= hi + 1e-12)))

# Episodes without any mapped code contribute a zero diagnostic feature.
empty_icd, empty_ccs = lookup_embeddings(graph, embeddings, [])
print("code-free episode ->", attend(empty_icd, empty_ccs).data)
