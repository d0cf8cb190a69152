"""
Command-line entry point.

    python main.py fom-run   --config rom_service/demo/desk.cfg
    python main.py pod-train --config rom_service/demo/desk.cfg
    python main.py rom-run   --config rom_service/demo/desk.cfg --modes 5
    python main.py validate  --config rom_service/demo/desk.cfg --threads 4
    python main.py probe     --config rom_service/demo/desk.cfg --kind line --axis x --offset 11.8e-3
    python main.py spectrum  --config rom_service/demo/desk.cfg

Exit codes: 0 success, 2 config error, 3 I/O error, 4 numerical failure.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from rom_service import pipeline
from rom_service.config.settings import load_config, settings
from rom_service.errors import EXIT_OK, exit_code_for

logger = logging.getLogger(__name__)

LOG_FORMAT = '[%(asctime)s] %(levelname)s - %(name)s - %(message)s'


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', required=True, type=Path, help='Run configuration file')
    common.add_argument('--override', action='append', default=[], metavar='KEY=VALUE',
                        help='Override a config value (repeatable)')
    common.add_argument('--threads', type=int, default=None, help='Parallel jobs for mode-count sweeps')
    common.add_argument('--out-dir', type=Path, default=None, help='Artifact directory')

    parser = argparse.ArgumentParser(prog='podtherm', description='POD/Galerkin reduced-order chip thermal simulation')
    commands = parser.add_subparsers(dest='command', required=True)

    fom = commands.add_parser('fom-run', parents=[common], help='Run the full-order model and save snapshots')
    fom.add_argument('--window', choices=['train', 'eval'], default='train')

    pod = commands.add_parser('pod-train', parents=[common], help='Train POD modes from snapshots')
    pod.add_argument('--snapshots', action='append', type=Path, default=[],
                     help='Snapshot file (repeatable; several files are pooled)')

    rom = commands.add_parser('rom-run', parents=[common], help='Integrate the ROM and reconstruct fields')
    rom.add_argument('--basis', type=Path, default=None)
    rom.add_argument('--modes', type=int, default=None, help='Mode count (default: largest in m_list)')

    commands.add_parser('validate', parents=[common], help='Full pipeline with convergence and speedup reports')

    probe = commands.add_parser('probe', parents=[common], help='Point, path and mode probes')
    probe.add_argument('--kind', choices=['point', 'line', 'modes'], required=True)
    probe.add_argument('--x', type=float, default=0.0, help='Point x (m)')
    probe.add_argument('--y', type=float, default=0.0, help='Point y (m)')
    probe.add_argument('--layer', type=int, default=0)
    probe.add_argument('--axis', choices=['x', 'y'], default='x')
    probe.add_argument('--offset', type=float, default=0.0, help='Transverse path offset (m)')
    probe.add_argument('--basis', type=Path, default=None)
    probe.add_argument('--modes', type=int, default=None)

    spectrum = commands.add_parser('spectrum', parents=[common], help='Spectrum table from a saved basis')
    spectrum.add_argument('--basis', type=Path, default=None)
    return parser


def dispatch(args: argparse.Namespace):
    config = load_config(args.config, args.override)
    ws = pipeline.prepare(config, out_dir=args.out_dir, threads=args.threads)

    if args.command == 'fom-run':
        pipeline.cmd_fom_run(ws, args.window)
    elif args.command == 'pod-train':
        pipeline.cmd_pod_train(ws, args.snapshots)
    elif args.command == 'rom-run':
        pipeline.cmd_rom_run(ws, args.basis, args.modes)
    elif args.command == 'validate':
        pipeline.cmd_validate(ws)
    elif args.command == 'probe':
        pipeline.cmd_probe(ws, args.kind, x=args.x, y=args.y, layer=args.layer, axis=args.axis,
                           offset=args.offset, M=args.modes, basis_path=args.basis)
    elif args.command == 'spectrum':
        pipeline.cmd_spectrum(ws, args.basis)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=settings.logging.level, format=LOG_FORMAT)

    try:
        dispatch(args)
    except Exception as e:
        code = exit_code_for(e)
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
