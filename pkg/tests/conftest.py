import sys
from pathlib import Path

# Make the shared oracle/builder module importable from every test file.
sys.path.insert(0, str(Path(__file__).parent))
