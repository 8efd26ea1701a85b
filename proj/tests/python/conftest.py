import pathlib
import sys

root = pathlib.Path(__file__).resolve().parents[2]
# development layout: the compiled module lives in the CMake build tree
for candidate in [root / "python", root / "build" / "src"]:
    if candidate.exists():
        sys.path.insert(0, str(candidate))
