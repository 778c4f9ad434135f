#!/usr/bin/env python3
"""
SlumpVision Setup Script
Prepares a working environment and runs a quick smoke check
"""

import subprocess
import sys
from pathlib import Path


def print_banner():
    print("=" * 60)
    print("🚀 SlumpVision - concrete slump estimation from mixing videos")
    print("=" * 60)
    print()


def check_python_version():
    """Check if Python version is compatible"""
    print("🐍 Checking Python version...")

    version = sys.version_info
    if version.major < 3 or (version.major == 3 and version.minor < 9):
        print(f"❌ Python {version.major}.{version.minor} detected. Python 3.9+ is required.")
        return False

    print(f"✅ Python {version.major}.{version.minor}.{version.micro} is compatible")
    return True


def install_dependencies():
    """Install requirements.txt, falling back to the minimal set"""
    print("📦 Installing dependencies...")

    result = subprocess.run([sys.executable, "-m", "pip", "install", "-r", "requirements.txt"],
                            capture_output=True, text=True)
    if result.returncode != 0:
        print("   Trying minimal requirements...")
        result = subprocess.run([sys.executable, "-m", "pip", "install", "-r", "requirements_minimal.txt"],
                                capture_output=True, text=True)

    if result.returncode == 0:
        print("✅ Dependencies installed successfully")
        return True
    print("❌ Failed to install dependencies:")
    print(result.stderr)
    return False


def create_env_file():
    """Create .env from env_example.txt if it doesn't exist"""
    print("🔧 Setting up environment file...")

    env_file = Path(".env")
    if env_file.exists():
        print("✅ .env file already exists")
        return True

    example_file = Path("env_example.txt")
    if not example_file.exists():
        print("❌ env_example.txt not found")
        return False

    env_file.write_text(example_file.read_text())
    print("✅ Created .env file")
    return True


def run_smoke_check():
    """Build each model and compare its parameter count"""
    print("🧪 Running smoke check...")

    try:
        from src.core.models import EXPECTED_PARAM_COUNTS, MODEL_IDS, build_model
        from src.core.rng import RngStream

        for model_id in MODEL_IDS:
            total = build_model(model_id, RngStream(seed=0)).param_count()
            if total != EXPECTED_PARAM_COUNTS[model_id]:
                print(f"❌ Model-{model_id} has {total:,} parameters, expected {EXPECTED_PARAM_COUNTS[model_id]:,}")
                return False
            print(f"✅ Model-{model_id}: {total:,} parameters")
        return True
    except Exception as e:
        print(f"❌ Smoke check failed: {e}")
        return False


def print_next_steps():
    print("\n" + "=" * 60)
    print("🎯 Setup Complete! Next Steps:")
    print("=" * 60)
    print("\n1. 🎬 Run the desk-scale demo:")
    print("   python demo.py")
    print("\n2. 🧪 Run the test suite:")
    print("   pytest            (add --runslow for the training acceptance runs)")
    print("\n3. 📚 See README.md for every command")


def main():
    print_banner()

    if not check_python_version():
        return
    if not install_dependencies():
        return
    if not create_env_file():
        return

    if run_smoke_check():
        print("✅ All checks passed!")
    print_next_steps()


if __name__ == "__main__":
    main()
