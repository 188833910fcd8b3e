"""
Configuration management for the Tikhonov regularization lab.
Uses Pydantic BaseSettings for environment variable loading with strict validation.
"""

from pathlib import Path
from typing import Optional
from pydantic import Field, field_validator
from pydantic_settings import BaseSettings
import logging


class Settings(BaseSettings):
    """Lab-wide configuration settings."""

    # Logging
    log_level: str = Field(default="INFO", description="Logging level")

    # Output
    output_dir: str = Field(default="results", description="Directory for tables, records and plot data")

    # Discretization (defaults: Nh=(2^5+1)^2 nodes, 2^11 time intervals)
    n_per_side: int = Field(default=33, description="Mesh nodes per side of the unit square")
    time_steps: int = Field(default=2048, description="Number of time intervals M")
    end_time: float = Field(default=0.5, description="Final time T_e")
    reduced_n_per_side: int = Field(default=17, description="Nodes per side in reduced-scale mode")
    reduced_time_steps: int = Field(default=512, description="Time intervals in reduced-scale mode")
    gauss_order: int = Field(default=3, description="Gauss-Legendre points per time interval")

    # Fixed-point iteration
    tolerance: float = Field(default=1e-5, description="Stopping threshold t0 on sup|B*(p_i - p_{i-1})|")
    max_iterations: int = Field(default=10000, description="Maximum fixed-point iterations per level")

    # Linear algebra
    linear_solver: str = Field(default="direct", description="Linear solver: direct or cg")
    cg_tolerance: float = Field(default=1e-13, description="Relative tolerance for conjugate gradients")
    residual_tolerance: float = Field(
        default=1e-12,
        description="Relative residual above which a linear solve is reported as failed"
    )

    # Concurrency
    max_workers: int = Field(default=1, description="Worker threads across regularization levels")

    model_config = {
        'env_file': Path(__file__).parent.parent.parent.parent / '.env',
        'env_prefix': 'REGLAB_',
        'case_sensitive': False,
        'extra': 'ignore'
    }

    def __init__(self, **kwargs):
        # Find .env file relative to the repository root
        env_file = Path(__file__).parent.parent.parent.parent / '.env'
        if not env_file.exists():
            # Try relative to current working directory
            env_file = Path('.env')

        if env_file.exists():
            from dotenv import load_dotenv
            load_dotenv(env_file)

        super().__init__(**kwargs)

    @field_validator('linear_solver')
    @classmethod
    def validate_linear_solver(cls, v):
        """Validate linear solver is supported."""
        if v not in ['direct', 'cg']:
            raise ValueError('linear_solver must be either "direct" or "cg"')
        return v

    @field_validator('log_level')
    @classmethod
    def validate_log_level(cls, v):
        """Validate log level is supported."""
        valid_levels = ['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL']
        if v.upper() not in valid_levels:
            raise ValueError(f'log_level must be one of {valid_levels}')
        return v.upper()

    @field_validator('gauss_order')
    @classmethod
    def validate_gauss_order(cls, v):
        if v < 2:
            raise ValueError('gauss_order must be at least 2')
        return v

    @field_validator('n_per_side', 'reduced_n_per_side')
    @classmethod
    def validate_nodes(cls, v):
        if v < 2:
            raise ValueError('nodes per side must be at least 2')
        return v

    @field_validator('time_steps', 'reduced_time_steps', 'max_iterations', 'max_workers')
    @classmethod
    def validate_positive_count(cls, v):
        if v < 1:
            raise ValueError('counts must be at least 1')
        return v

    @field_validator('end_time', 'tolerance', 'cg_tolerance', 'residual_tolerance')
    @classmethod
    def validate_positive(cls, v):
        if v <= 0:
            raise ValueError('value must be positive')
        return v

    def setup_logging(self):
        """Setup logging configuration."""
        logging.basicConfig(
            level=getattr(logging, self.log_level),
            format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        )


# Global settings instance
_settings: Optional[Settings] = None


def get_settings() -> Settings:
    """Get settings instance (singleton pattern)."""
    global _settings
    if _settings is None:
        try:
            _settings = Settings()
            _settings.setup_logging()
        except Exception as e:
            # Log the error and re-raise to fail fast
            print(f"FATAL: Configuration loading failed: {e}")
            raise
    return _settings


def reload_settings() -> Settings:
    """Reload settings (useful for testing)."""
    global _settings
    _settings = None
    return get_settings()
