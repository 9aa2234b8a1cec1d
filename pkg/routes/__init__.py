"""
Command modules registered by the application factory.
"""
from typing import Any, Dict, Optional

import click

from app import CliState
from utils.checkpoint import dumps
from utils.errors import success_response

pass_state = click.make_pass_decorator(CliState)


def echo_result(data: Optional[Dict[str, Any]] = None, message: Optional[str] = None) -> None:
    """Print a command's result envelope as canonical JSON on stdout."""
    click.echo(dumps(success_response(data, message)), nl=False)
