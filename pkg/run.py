#!/usr/bin/env python3
"""
Entry point for the Deep Dynamics command line
"""

import logging
import os

from dotenv import load_dotenv

from app import create_app


def main():
    load_dotenv()
    logging.basicConfig(
        level=os.environ.get("DEEPDYN_LOG_LEVEL", "INFO").upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    cli = create_app()
    cli(prog_name="deepdyn")


if __name__ == '__main__':
    main()
