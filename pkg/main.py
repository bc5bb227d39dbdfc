"""
splitleak: command-line entry point. Subcommands are the Django management
commands of the services, with hyphens in place of underscores.
"""
import os
import sys
from pathlib import Path


def main(argv=None):
    argv = list(sys.argv if argv is None else argv)
    sys.path.insert(0, str(Path(__file__).resolve().parent))
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'src.config.settings')
    try:
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError(
            "Couldn't import Django. Are you sure it's installed?"
        ) from exc
    if len(argv) > 1 and not argv[1].startswith('-'):
        argv[1] = argv[1].replace('-', '_')
    argv[0] = 'splitleak'
    execute_from_command_line(argv)


if __name__ == "__main__":
    main()
