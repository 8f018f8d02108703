import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent / "src"))

from absl import app  # noqa: E402

import cli  # noqa: E402

if __name__ == "__main__":
    app.run(cli.main, flags_parser=cli.parse_flags)
