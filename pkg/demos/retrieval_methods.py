"""
Compare the three retrieval methods on a toy corpus with a canned "model".

No network: a tiny transport answers chat requests with fixed text, and
MockEmbedder provides deterministic embeddings with a few planted vectors
so the geometry is easy to reason about:

  * rate notes point along axis 0, equity notes along axis 1
  * the question is phrased so its raw embedding leans toward equities
  * the hypothetical answer and the query variants point at rates

    python3 demos/retrieval_methods.py
"""
import datetime as dt

import numpy as np

from marketsense.gateway import Cassette, Gateway, MockEmbedder
from marketsense.index import Chunk, ChunkMeta, VectorIndex, make_chunk_id
from marketsense.retrieval import RetrievalRequest, Retriever

DIM = 6
AS_OF = dt.date(2024, 3, 1)
QUESTION = "What will the central bank do with rates?"
HYPO = "The central bank is expected to hold rates and cut later in the year."
VARIANTS = ["Rate path outlook?", "Policy rate expectations?", "Timing of the first cut?"]


class CannedTransport:
    """Returns a canned reply keyed on the system prompt of the template."""

    def post_json(self, url, payload, headers):
        system, user = payload["messages"][0]["content"], payload["messages"][-1]["content"]
        if "strategist" in system:
            text = HYPO
        elif "rewrite search queries" in system:
            text = "\n".join(VARIANTS)
        else:
            text = "Answer drawn from: " + ", ".join(
                ln.split("|")[0].strip() for ln in user.splitlines() if ln.startswith("[")
            )
        return {"choices": [{"message": {"content": text}, "finish_reason": "stop"}]}


emb = MockEmbedder(DIM, seed=1)
e = np.eye(DIM)
emb.plant(QUESTION, 0.45 * e[0] + 0.89 * e[1])
emb.plant(HYPO, e[0])
for v in VARIANTS:
    emb.plant(v, e[0] + 0.05 * e[2])

rng = np.random.default_rng(0)
idx = VectorIndex(DIM)
chunks = []
for i in range(5):
    for topic, axis, publisher in (("rates", 0, "Fed watcher"), ("equities", 1, "Equity desk")):
        vec = e[axis] + 0.05 * rng.standard_normal(DIM)
        chunks.append(Chunk(
            make_chunk_id(topic, i), topic, i, f"{topic} note {i}",
            vec.astype(np.float32), ChunkMeta(AS_OF - dt.timedelta(days=3 + i), publisher, "macro_report"),
        ))
idx.upsert_chunks(chunks)

gw = Gateway("record", Cassette(), transport=CannedTransport(), endpoint="http://offline", embedder=emb)
retriever = Retriever(idx, gw)

for method in ("simple", "hyde", "optimized"):
    ans = retriever.answer(RetrievalRequest(QUESTION, AS_OF, method, 3, 30))
    hits = [s.chunk.text for s in ans.supporting_chunks]
    n_rates = sum(h.startswith("rates") for h in hits)
    print(f"{method:<10} {n_rates}/3 rate notes   {hits}")

print(f"\ncassette now holds {len(gw.cassette)} recorded chat exchanges")
