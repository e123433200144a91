"""Compare the compiled BM25 scoring kernel against the numpy fallback.

Builds a synthetic corpus, runs the same query workload through both kernel
implementations, verifies they agree, and reports throughput.

    python3 benchmarks/bench_bm25.py [--docs 20000] [--queries 300]
"""

import argparse
import random
import time

import numpy as np

from convrag.retrieval import _kernels_py
from convrag.retrieval.bm25 import build_bm25
from convrag.retrieval.corpus import ingest_corpus, tokenize

try:
    from convrag.retrieval import _kernels as _kernels_cy
except ImportError:
    _kernels_cy = None


def make_corpus(n_docs: int, vocab_size: int, rng: random.Random):
    # Zipf-ish skew so posting lists vary in length like real text.
    vocab = [f"term{i}" for i in range(vocab_size)]
    weights = [1.0 / (i + 1) for i in range(vocab_size)]
    records = []
    for i in range(n_docs):
        words = rng.choices(vocab, weights=weights, k=rng.randint(20, 120))
        records.append({"id": f"p{i}", "title": "", "text": " ".join(words)})
    return ingest_corpus(records), vocab


def score_workload(index, queries, kernel) -> np.ndarray:
    checksum = np.zeros(index.doc_count)
    for query in queries:
        scores = np.zeros(index.doc_count)
        for term in tokenize(query):
            entry = index.postings.get(term)
            if entry is None:
                continue
            positions, tfs = entry
            kernel.add_term_scores(
                scores, positions, tfs, index.idf[term], index.params.k1, index.doc_norms
            )
        checksum += scores
    return checksum


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--docs", type=int, default=20_000)
    parser.add_argument("--vocab", type=int, default=2_000)
    parser.add_argument("--queries", type=int, default=300)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    rng = random.Random(0)
    corpus, vocab = make_corpus(args.docs, args.vocab, rng)
    index = build_bm25(corpus)
    queries = [" ".join(rng.choices(vocab[:400], k=rng.randint(2, 6))) for _ in range(args.queries)]
    print(f"corpus: {args.docs} docs, {len(index.postings)} terms; {args.queries} queries")

    kernels = {"python (numpy)": _kernels_py}
    if _kernels_cy is not None:
        kernels["cython"] = _kernels_cy
    else:
        print("compiled kernel not built; benchmarking the fallback only")

    checksums = {}
    timings = {}
    for name, kernel in kernels.items():
        best = float("inf")
        for _ in range(args.repeats):
            start = time.perf_counter()
            checksums[name] = score_workload(index, queries, kernel)
            best = min(best, time.perf_counter() - start)
        timings[name] = best
        print(f"{name:16s} {best:8.3f}s  ({args.queries / best:8.1f} queries/s)")

    if len(checksums) == 2:
        a, b = checksums.values()
        max_diff = float(np.max(np.abs(a - b)))
        print(f"max |score difference| between kernels: {max_diff:.2e}")
        assert max_diff < 1e-9, "kernels disagree"
        py, cy = timings["python (numpy)"], timings["cython"]
        print(f"speedup (python/cython): {py / cy:.2f}x")


if __name__ == "__main__":
    main()
