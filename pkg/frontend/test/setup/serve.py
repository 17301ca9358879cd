"""Run the session service over a fixture checkpoint directory.

Usage: python3 serve.py <checkpoint_dir> <port>
"""

import sys
from pathlib import Path

import uvicorn

from boed.service.app import create_app

if __name__ == "__main__":
    ckpt_dir = Path(sys.argv[1])
    port = int(sys.argv[2])
    app = create_app(ckpt_dir, journal_path=ckpt_dir / "ui-test.journal")
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")
