#!/usr/bin/env python3
"""
Setup script for the TriDet detector
Writes a documented .env file and checks that dependencies are importable
"""

import importlib.util
from pathlib import Path
from typing import List, Sequence

REQUIRED_MODULES = ("numpy", "pandas", "plotly", "dotenv", "loguru")

ENV_TEMPLATE = """# Environment Configuration for the TriDet detector

# Logging
TRIDET_LOG_LEVEL=INFO
# TRIDET_LOG_FILE=./logs/tridet.log
TRIDET_DEBUG=False

# Reproducibility (overrides the seed of every run configuration when set)
# TRIDET_SEED=0

# Data
TRIDET_DATA_DIR=./data

# Gradient-check acceptance threshold (worst relative error)
TRIDET_GRADCHECK_TOL=1e-4
"""


def setup_environment(env_file: Path = Path(".env")) -> bool:
    """Create the .env file if it doesn't exist; returns True when a file was written"""
    if env_file.exists():
        print("✅ .env file already exists")
        return False
    print("Creating .env file...")
    env_file.write_text(ENV_TEMPLATE)
    print("✅ .env file created!")
    return True


def check_dependencies(modules: Sequence[str] = REQUIRED_MODULES) -> List[str]:
    """Return the required modules that cannot be imported"""
    missing = [name for name in modules if importlib.util.find_spec(name) is None]
    for name in modules:
        print(("❌ " if name in missing else "✅ ") + name)
    return missing


def main():
    """Main setup function"""
    print("TriDet detector setup")
    print("=" * 40)

    setup_environment()
    missing = check_dependencies()

    print("\n📋 Next Steps:")
    if missing:
        print("1. Run: pip install -r requirements.txt")
        print("2. Run: python -m cli.app gradcheck")
    else:
        print("1. Run: python -m cli.app gradcheck")
        print("2. Run: python -m cli.app synth --videos 10 --seed 7")

    print("\n🎉 Setup complete!")


if __name__ == "__main__":
    main()
