#!/usr/bin/env python3
"""
Development environment setup for the Tikhonov regularization lab.

Builds the virtual environment, tries the optional CHOLMOD backend, writes a
.env and finishes with a toy-scale `verify` run as a smoke test.
"""

import argparse
import subprocess
import sys
from pathlib import Path

BASE_PATH = Path(__file__).parent
VENV_PATH = BASE_PATH / "venv"
PYTHON = VENV_PATH / "bin" / "python"
CLI = "tikhonov_lab.cli.main"


def run_command(cmd, description, env=None):
    """Run a command; report and return False on failure."""
    print(f"🔄 {description}...")
    try:
        subprocess.run(cmd, check=True, capture_output=True, text=True, cwd=BASE_PATH, env=env)
        print(f"✅ {description} completed")
        return True
    except subprocess.CalledProcessError as e:
        print(f"❌ {description} failed: {e}")
        print(f"Error output: {e.stderr}")
        return False


def install_cholmod():
    """scikit-sparse needs the SuiteSparse headers; without it SpdSolver falls back to SuperLU."""
    if run_command([str(PYTHON), "-m", "pip", "install", "scikit-sparse"], "Installing scikit-sparse (CHOLMOD)"):
        return "cholmod"
    print("ℹ️  Direct solves will use scipy SuperLU (install SuiteSparse to enable CHOLMOD)")
    return "splu"


def write_env(output_dir):
    env_file = BASE_PATH / ".env"
    if env_file.exists():
        print("ℹ️  Keeping existing .env")
        return
    lines = (BASE_PATH / ".env.template").read_text().splitlines()
    lines = [f"REGLAB_OUTPUT_DIR={output_dir}" if line.startswith("REGLAB_OUTPUT_DIR=") else line
             for line in lines]
    env_file.write_text("\n".join(lines) + "\n")
    print(f"ℹ️  Created .env from .env.template (output directory: {output_dir})")


def smoke_test(output_dir):
    env = {"PYTHONPATH": str(BASE_PATH / "src"), "PATH": str(VENV_PATH / "bin")}
    cmd = [str(PYTHON), "-m", CLI, "verify", "--output", str(Path(output_dir) / "smoke")]
    return run_command(cmd, "Running the property suite at toy scale", env=env)


def main(argv=None):
    parser = argparse.ArgumentParser(description="Set up the tikhonov-lab development environment")
    parser.add_argument("--output-dir", default="results", help="REGLAB_OUTPUT_DIR written to .env")
    parser.add_argument("--no-cholmod", action="store_true", help="skip the optional scikit-sparse install")
    parser.add_argument("--skip-smoke", action="store_true", help="skip the toy-scale verify run")
    args = parser.parse_args(argv)

    print("🚀 Tikhonov Regularization Lab - Development Setup")
    print("=" * 50)

    if VENV_PATH.exists():
        print("ℹ️  Virtual environment already exists")
    elif not run_command([sys.executable, "-m", "venv", str(VENV_PATH)], "Creating virtual environment"):
        return 1

    if not run_command([str(PYTHON), "-m", "pip", "install", "-r", str(BASE_PATH / "requirements.txt")],
                       "Installing numpy, scipy and pydantic stack"):
        return 1
    direct_backend = "splu" if args.no_cholmod else install_cholmod()

    write_env(args.output_dir)
    (BASE_PATH / args.output_dir).mkdir(parents=True, exist_ok=True)

    if not args.skip_smoke and not smoke_test(args.output_dir):
        print("⚠️  verify reported a failed check; see the log above")
        return 1

    print("\n" + "=" * 50)
    print(f"🎉 Lab ready (direct solver: {direct_backend})")
    print("\nTo activate the environment:")
    print(f"source {VENV_PATH}/bin/activate")
    print("\nReduced-scale regularization path, kappa = 1:")
    print(f"PYTHONPATH=src python -m {CLI} path --kappa 1 --reduced-scale")
    print("\nReference grids (33 nodes per side, 2048 steps) for all four exponents:")
    print(f"for k in 0.3 0.5 1 2; do PYTHONPATH=src python -m {CLI} path --kappa $k; done")
    print("\nSolver order studies:")
    print(f"PYTHONPATH=src python -m {CLI} convergence")
    print("\nTo run tests:")
    print("python -m pytest tests/ -v")

    return 0


if __name__ == "__main__":
    sys.exit(main())
