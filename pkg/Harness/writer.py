import io
import json
import logging
import threading
from datetime import datetime, timezone
from pathlib import Path

from Harness.checkpoint import encode_checkpoint

logger = logging.getLogger(__name__)

MANIFEST = 'manifest.json'


def _now():
    return datetime.now(timezone.utc).isoformat(timespec='seconds')


class RunWriter:
    """Single funnel for every file written into a run directory.

    Writes are serialised by a lock and every written path is recorded, so
    the manifest lists exactly the files the run produced. Timestamps only
    ever appear in the manifest.
    """

    def __init__(self, root, config=None, seeds=None):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self.manifest = self._load_manifest()
        if config is not None:
            self.manifest['config'] = config
        if seeds:
            self.manifest.setdefault('seeds', {}).update(seeds)

    def _load_manifest(self):
        path = self.root / MANIFEST
        if path.exists():
            return json.loads(path.read_text())
        return {'stages': {}, 'outputs': [], 'seeds': {}}

    def path(self, relative):
        return self.root / relative

    def exists(self, relative):
        return (self.root / relative).exists()

    def _record(self, relative):
        relative = Path(relative).as_posix()
        if relative not in self.manifest['outputs']:
            self.manifest['outputs'].append(relative)
            self.manifest['outputs'].sort()

    def write_bytes(self, relative, data):
        with self._lock:
            target = self.root / relative
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(data)
            self._record(relative)
        logger.debug("Wrote %s (%d bytes)", relative, len(data))
        return target

    def write_text(self, relative, text):
        return self.write_bytes(relative, text.encode('utf-8'))

    def write_json(self, relative, payload):
        return self.write_text(relative, json.dumps(payload, indent=2, sort_keys=True) + '\n')

    def write_frame(self, relative, frame, float_format='%.17g'):
        buffer = io.StringIO()
        frame.to_csv(buffer, index=False, float_format=float_format, lineterminator='\n')
        return self.write_text(relative, buffer.getvalue())

    def write_checkpoint(self, relative, checkpoint):
        return self.write_bytes(relative, encode_checkpoint(checkpoint))

    def write_with(self, relatives, produce):
        """Run ``produce(*paths)`` under the lock for helpers that write their own files."""
        with self._lock:
            paths = [self.root / r for r in relatives]
            for target in paths:
                target.parent.mkdir(parents=True, exist_ok=True)
            produce(*paths)
            for relative in relatives:
                self._record(relative)
        return paths

    def stage_started(self, stage):
        with self._lock:
            self.manifest['stages'][stage] = {'status': 'running', 'started': _now()}
            self._flush()

    def stage_finished(self, stage):
        with self._lock:
            self.manifest['stages'][stage].update(status='ok', finished=_now())
            if self.manifest.get('failed_stage') == stage:
                del self.manifest['failed_stage']
            self._flush()

    def stage_failed(self, stage, error):
        with self._lock:
            entry = self.manifest['stages'].setdefault(stage, {'started': _now()})
            entry.update(status='failed', finished=_now(), error=str(error))
            self.manifest['failed_stage'] = stage
            self._flush()

    def _flush(self):
        (self.root / MANIFEST).write_text(json.dumps(self.manifest, indent=2, sort_keys=True) + '\n')

    def flush(self):
        with self._lock:
            self._flush()
