"""Campaign orchestration: manifests, simulation sweeps, analysis plans."""
from .manifest import Manifest, ManifestError, load_manifest, parse_manifest_text
from .campaign import ResourceCapError, TraceStore, analyze, expand_tasks, output_dir, simulate
from .main import main
