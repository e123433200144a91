import sys
from pathlib import Path

# Make the shared fixture helpers importable as `fixtures` from any test.
sys.path.insert(0, str(Path(__file__).parent))
