"""Write a >= 1 MB byte corpus for the char-LM configs (data/corpus.txt by default)."""
import argparse
from pathlib import Path

from indrnn.tasks import stdlib_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "data" / "corpus.txt"))
    ap.add_argument("--min-bytes", type=int, default=1 << 20)
    args = ap.parse_args()
    data = stdlib_corpus(args.min_bytes)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(data)
    print(f"wrote {len(data)} bytes to {out}")


if __name__ == "__main__":
    main()
