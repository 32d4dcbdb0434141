"""Regenerate the bundled synthetic corpus under src/speer/data/.

Run from the repository root:  python3 tools/generate_data.py
"""

from pathlib import Path

from speer.synthetic import generate_corpus, write_corpus_files


def main() -> None:
    corpus = generate_corpus(n_admissions=12, seed=7, salience_rule="random", long_stays=3)
    target = Path(__file__).resolve().parent.parent / "src" / "speer" / "data"
    paths = write_corpus_files(corpus, target)
    for name, path in paths.items():
        print(f"{name}: {path}")


if __name__ == "__main__":
    main()
