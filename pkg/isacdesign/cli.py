#!/usr/bin/env python3
"""
The isacdesign command: design, evaluate, validate and sweep.
"""

import click

from isacdesign import __version__
from isacdesign.design.runner import runner as design
from isacdesign.design.runner import sweep
from isacdesign.evaluation.runner import runner as evaluate
from isacdesign.validation.runner import runner as validate


@click.group()
@click.version_option(__version__, prog_name="isacdesign")
def cli() -> None:
    """Co-design of an ISAC waveform and its receive filter."""


cli.add_command(design, name="design")
cli.add_command(evaluate, name="evaluate")
cli.add_command(validate, name="validate")
cli.add_command(sweep, name="sweep")


if __name__ == "__main__":
    cli()
