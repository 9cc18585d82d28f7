"""Command-line entry point for lendscreen runs.

Usage:
  lendscreen generate --config samples/desk_scale.json --out data/desk
  lendscreen train --data data/desk --variant ours [--debug]
  lendscreen evaluate --data data/desk --checkpoint runs/train-…/checkpoint.json
  lendscreen ablate --data data/desk --seeds 0,1,2,3,4 [--plot]
  lendscreen backbones --data data/desk --seeds 0,1 --backbones rnn,gru
  lendscreen transductive --data data/desk --seeds 0,1,2,3,4
  lendscreen sweep --data data/desk --ratios 0,0.01 --seeds 0 [--with-transductive]
  lendscreen embed --checkpoint runs/train-…/checkpoint.json --data data/desk \\
      --out embeddings/ [--plot]

Exit codes: 0 success, 2 usage, config or dataset error, 3 numerical failure.
"""

import argparse
import asyncio
import inspect
import json
import logging
import sys
from typing import List, Optional

from . import LOGGER_NAME
from .lendscreen import LendScreenApi
from .lendscreen_enums import BackboneKind, Command, Variant
from .lendscreen_errors import LendScreenError, NumericalError
from .lendscreen_parsing import type_parsing

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


def enable_console_logging(level: int = logging.INFO) -> logging.Logger:
    logger = logging.getLogger(LOGGER_NAME)
    if not any(type(handler) is logging.StreamHandler
               for handler in logger.handlers):
        console = logging.StreamHandler()
        formatter = logging.Formatter(
            '%(asctime)s [%(levelname)8s] %(filename)s:%(lineno)s - %(message)s ')
        console.setFormatter(formatter)
        logger.addHandler(console)
    logger.setLevel(level)
    return logger


def _int_list(text: str) -> List[int]:
    try:
        return type_parsing.int_list(text)
    except ValueError as error:
        raise argparse.ArgumentTypeError(str(error))


def _float_list(text: str) -> List[float]:
    try:
        return type_parsing.float_list(text)
    except ValueError as error:
        raise argparse.ArgumentTypeError(str(error))


def _backbone_list(text: str) -> List[str]:
    kinds = [part.strip() for part in text.split(',') if part.strip()]
    valid = [kind.value for kind in BackboneKind]
    for kind in kinds:
        if kind not in valid:
            raise argparse.ArgumentTypeError(
                f"unknown backbone '{kind}' (choose from {', '.join(valid)})")
    return kinds


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        '--config',
        help='JSON config file with generator/model/training/profit/'
             'experiment sections.')
    common.add_argument(
        '--set', dest='overrides', action='append', default=[],
        metavar='SECTION.KEY=VALUE',
        help='Override one config value; may be repeated. Wins over --config.')
    common.add_argument(
        '--runs-dir', default='runs',
        help='Root of run directories (env LENDSCREEN_RUNS_DIR overrides).')
    common.add_argument(
        '--workers', type=int, default=1,
        help='Parallel experiment jobs (env LENDSCREEN_WORKERS overrides).')
    common.add_argument(
        '--debug', action='store_true',
        help='Log debug messages, including per-step losses.')

    parser = argparse.ArgumentParser(
        prog='lendscreen',
        description='Inclusive loan screening with contrastive learning and '
                    'domain adaptation on synthetic selective-labels data.')
    commands = parser.add_subparsers(dest='command', required=True)

    generate = commands.add_parser(Command.GENERATE, parents=[common],
                                   help='Generate a synthetic train/test split.')
    generate.add_argument('--out', required=True,
                          help='Directory for train.jsonl and test.jsonl.')
    generate.add_argument('--n-borrowers', type=int)
    generate.add_argument('--bias-strength', type=float)
    generate.add_argument('--seed', type=int)

    def with_data(name: str, help_text: str) -> argparse.ArgumentParser:
        command = commands.add_parser(name, parents=[common], help=help_text)
        command.add_argument('--data', required=True,
                             help='Dataset directory written by generate.')
        return command

    train = with_data(Command.TRAIN, 'Train and evaluate one model.')
    train.add_argument('--variant', choices=[v.value for v in Variant])
    train.add_argument('--backbone', choices=[b.value for b in BackboneKind])
    train.add_argument('--epochs', type=int)
    train.add_argument('--batch-size', type=int)
    train.add_argument('--transductive', action='store_true', default=None,
                       help='Use unlabeled test loans in CL and DA.')
    train.add_argument('--seed', type=int)

    evaluate = with_data(Command.EVALUATE, 'Evaluate a saved checkpoint.')
    evaluate.add_argument('--checkpoint', required=True)

    ablate = with_data(Command.ABLATE,
                       'Train ours, no-CL, no-DA and neither per seed.')
    ablate.add_argument('--seeds', type=_int_list)
    ablate.add_argument('--plot', action='store_true', default=None)

    backbones = with_data(Command.BACKBONES,
                          'Ablation grid for every sequence backbone.')
    backbones.add_argument('--seeds', type=_int_list)
    backbones.add_argument('--backbones', type=_backbone_list)

    transductive = with_data(Command.TRANSDUCTIVE,
                             'Full model with and without test loans in CL '
                             'and DA.')
    transductive.add_argument('--seeds', type=_int_list)

    sweep = with_data(Command.SWEEP, 'Labeled-test-ratio sweep.')
    sweep.add_argument('--ratios', type=_float_list)
    sweep.add_argument('--seeds', type=_int_list)
    sweep.add_argument('--with-transductive', action='store_true', default=None)
    sweep.add_argument('--plot', action='store_true', default=None)

    embed = with_data(Command.EMBED,
                      'Export fused vectors and their 2-D PCA projection.')
    embed.add_argument('--checkpoint', required=True)
    embed.add_argument('--out', required=True)
    embed.add_argument('--split', choices=['train', 'test'], default='train')
    embed.add_argument('--plot', action='store_true', default=None)
    return parser


def _flag_overrides(args: argparse.Namespace) -> List[str]:
    """Dedicated flags, expressed as overrides so they win over the file."""
    flags = {
        'n_borrowers': 'generator.n_borrowers',
        'bias_strength': 'generator.bias_strength',
        'backbone': 'model.backbone',
        'epochs': 'training.epochs',
        'batch_size': 'training.batch_size',
        'transductive': 'training.transductive',
    }
    overrides = []
    for name, key in flags.items():
        value = getattr(args, name, None)
        if value is not None:
            overrides.append(f'{key}={value}')
    seed = getattr(args, 'seed', None)
    if seed is not None:
        section = 'generator' if args.command == Command.GENERATE else 'training'
        overrides.append(f'{section}.seed={seed}')
    variant = getattr(args, 'variant', None)
    if variant is not None:
        variant = Variant(variant)
        overrides += [f'training.use_cl={str(variant.use_cl).lower()}',
                      f'training.use_da={str(variant.use_da).lower()}']
    return overrides


def _run(api: LendScreenApi, args: argparse.Namespace):
    configs = None
    if args.config or args.overrides or args.command != Command.EVALUATE:
        configs = api.load_config(args.config,
                                  args.overrides + _flag_overrides(args))
    command = Command(args.command)
    if command == Command.GENERATE:
        return api.generate(configs, args.out)
    if command == Command.TRAIN:
        return api.train(configs, args.data)
    if command == Command.EVALUATE:
        return api.evaluate(configs, args.data, args.checkpoint)
    if command == Command.ABLATE:
        return api.ablate(configs, args.data, args.seeds, args.plot)
    if command == Command.BACKBONES:
        return api.backbones(configs, args.data, args.seeds, args.backbones)
    if command == Command.TRANSDUCTIVE:
        return api.transductive(configs, args.data, args.seeds)
    if command == Command.SWEEP:
        return api.sweep(configs, args.data, args.ratios, args.seeds,
                         args.with_transductive, args.plot)
    if command == Command.EMBED:
        configs = configs if (args.config or args.overrides) else None
        return api.embed(configs, args.checkpoint, args.data, args.out,
                         args.split, args.plot)


def _summary_line(manifest) -> str:
    return (f"{manifest['run_id']}: "
            + json.dumps(manifest['metrics'], sort_keys=True, default=str))


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logger = enable_console_logging(logging.DEBUG if args.debug
                                    else logging.INFO)
    try:
        api = LendScreenApi(runs_dir=args.runs_dir, workers=args.workers,
                            logger=logger)
        manifest = _run(api, args)
        if inspect.iscoroutine(manifest):
            manifest = asyncio.run(manifest)
    except NumericalError as error:
        print(f"error: {error}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (LendScreenError, OSError, ValueError) as error:
        print(f"error: {error}", file=sys.stderr)
        return EXIT_USAGE
    print(_summary_line(manifest))
    return EXIT_OK
