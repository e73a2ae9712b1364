"""Drive the ``dexkeys`` command line in subprocesses against a live server."""

import json
import os
import subprocess
import sys
from pathlib import Path


class CliWorkspace:
    def __init__(self, root: Path, paillier_bits: int = 1024):
        self.root = Path(root)
        self.env = {**os.environ, "DEXKEYS_PASSPHRASE": "pass-123"}
        self.env.pop("DEXKEYS_SERVER", None)
        self.server = None
        self.endpoints = {}
        self.exchange_key = self.root / "exchange.json"
        self.paillier_bits = paillier_bits

    def path(self, name: str) -> str:
        return str(self.root / name)

    def run(self, *args, check: int | None = 0, timeout: float = 120) -> subprocess.CompletedProcess:
        proc = subprocess.run([sys.executable, "-m", "dexkeys.cli", *map(str, args)], env=self.env,
                              capture_output=True, text=True, timeout=timeout, cwd=self.root)
        if check is not None and proc.returncode != check:
            raise AssertionError(f"dexkeys {' '.join(map(str, args))} exited {proc.returncode}, expected {check}\n"
                                 f"stdout: {proc.stdout}\nstderr: {proc.stderr}")
        return proc

    def write_json(self, name: str, doc) -> str:
        p = self.root / name
        p.write_text(json.dumps(doc))
        return str(p)

    def start_server(self, **extra) -> dict:
        if not self.exchange_key.exists():
            self.run("keygen", "paillier", "--bits", self.paillier_bits, "--out", self.exchange_key)
        config = {"host": "127.0.0.1", "http_port": 0, "tcp_port": 0, "storage_dir": self.path("state"),
                  "storage_key": "11" * 32, "paillier_key": str(self.exchange_key), "deferred_interval": 0.1}
        config.update(extra)
        cfg = self.write_json("serve.json", config)
        self.server = subprocess.Popen([sys.executable, "-m", "dexkeys.cli", "serve", "--config", cfg],
                                       env=self.env, stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True,
                                       cwd=self.root)
        while len(self.endpoints) < 2:
            line = self.server.stdout.readline()
            if not line:
                raise AssertionError(f"server exited early: {self.server.stderr.read()}")
            if line.startswith("listening "):
                url = line.split()[1]
                self.endpoints[url.split(":", 1)[0]] = url
        return self.endpoints

    def stop_server(self) -> int:
        if self.server is None:
            return 0
        self.server.terminate()
        try:
            code = self.server.wait(timeout=10)
        except subprocess.TimeoutExpired:
            self.server.kill()
            code = self.server.wait()
        self.server.stdout.close()
        self.server.stderr.close()
        self.server = None
        self.endpoints = {}
        return code
