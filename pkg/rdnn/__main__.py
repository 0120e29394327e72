import sys
from typing import Optional, Sequence

import click

import rdnn.systems  # noqa: F401  registers the benchmark systems
from rdnn import SystemRegistry, __version__
from rdnn.errors import (
    ConfigurationError,
    ContractError,
    DataFormatError,
    DivergenceError,
    EvaluationError,
    GenerationError,
    RDNNError,
)
from rdnn.residual import SchemeKind

'''
================================== Command Line Interface ======================================
Commands:
    gen-data: Sample data pairs of a benchmark system
        --system, --n-pairs, --dt, --substeps

    train: Fit the RHS network to a pair-set CSV
        --data, --scheme, --stages, --hidden, --adam-steps, --lbfgs-max-iters, --batch

    predict: Roll out a checkpoint, optionally against a true system
        --checkpoint, --ic, --horizon, --eval-step, --truth, --truth-substeps

    reproduce: Rebuild one of the benchmark tables
        --table {1,2,3}, --scale {paper,smoke}, --workers

Every command accepts --config PATH (YAML/JSON, flags win), --seed, --out DIR,
--log-dir and --log-level. Exit codes: 0 success, 1 usage/configuration,
2 runtime/divergence, 3 I/O.
'''

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3


def common_options(func):
    options = [
        click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
                     help='YAML or JSON configuration file'),
        click.option('--seed', type=int, default=None, help='Random seed'),
        click.option('--out', 'out_dir', type=click.Path(file_okay=False), default=None,
                     help='Output directory'),
        click.option('--log-dir', type=click.Path(file_okay=False), default=None,
                     help='Directory for rdnn.log'),
        click.option('--log-level', type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR'], case_sensitive=False),
                     default='WARNING', show_default=True, help='Console log level'),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _run(command: str, config_path, out_dir, log_dir, log_level, **overrides):
    from rdnn.base import create_procedure
    from rdnn.utils._logger import setup_logging

    setup_logging(log_dir, log_level, force=True)
    return create_procedure(command, config_path, out_dir, **overrides).run()


def _fmt(value) -> str:
    return f"{value:.6g}" if isinstance(value, float) else str(value)


@click.group()
@click.version_option(__version__, prog_name='rdnn')
def cli():
    """rdnn Command Line Interface"""


@cli.command('gen-data')
@common_options
@click.option('--system', type=click.Choice(SystemRegistry.names()), default=None, help='Benchmark system')
@click.option('--n-pairs', type=int, default=None, help='Number of pairs')
@click.option('--dt', type=float, default=None, help='Time lag of each pair')
@click.option('--substeps', type=int, default=None, help='RK4 substeps of the generator')
def gen_data(config_path, seed, out_dir, log_dir, log_level, system, n_pairs, dt, substeps):
    summary = _run('gen-data', config_path, out_dir, log_dir, log_level,
                   seed=seed, system=system, n_pairs=n_pairs, dt=dt, substeps=substeps)
    click.echo(f"system={summary['system']} n_pairs={summary['n_pairs']} dt={_fmt(summary['dt'])} "
               f"seed={summary['seed']} domain={summary['domain']['lower']}..{summary['domain']['upper']}")
    click.echo(summary['path'])
    return summary


@cli.command()
@common_options
@click.option('--data', type=click.Path(dir_okay=False), default=None, help='Pair-set CSV')
@click.option('--scheme', type=click.Choice([k.value for k in SchemeKind]), default=None, help='Residual scheme')
@click.option('--stages', type=int, default=None, help='Recursive stage count M')
@click.option('--hidden', type=str, default=None, help='Hidden widths, e.g. "128" or "64,64"')
@click.option('--adam-steps', type=int, default=None)
@click.option('--lbfgs-max-iters', type=int, default=None)
@click.option('--batch', type=str, default=None, help="'full' or a mini-batch size")
@click.option('--progress/--no-progress', default=None, help='Show a progress bar')
def train(config_path, seed, out_dir, log_dir, log_level, data, scheme, stages, hidden, adam_steps,
          lbfgs_max_iters, batch, progress):
    summary = _run('train', config_path, out_dir, log_dir, log_level,
                   seed=seed, data=data, scheme=scheme, stages=stages, hidden=hidden,
                   adam_steps=adam_steps, lbfgs_max_iters=lbfgs_max_iters, batch=batch, progress=progress)
    click.echo(f"scheme={summary['scheme']} n_pairs={summary['n_pairs']} final_loss={_fmt(summary['final_loss'])}")
    click.echo(summary['checkpoint'])
    return summary


@cli.command()
@common_options
@click.option('--checkpoint', type=click.Path(dir_okay=False), default=None, help='Checkpoint JSON')
@click.option('--ic', type=str, default=None, help='Initial condition, e.g. "2,0"')
@click.option('--horizon', type=float, default=None)
@click.option('--eval-step', type=float, default=None)
@click.option('--truth', type=click.Choice(SystemRegistry.names()), default=None,
              help='True system to compare against')
@click.option('--truth-substeps', type=int, default=None)
def predict(config_path, seed, out_dir, log_dir, log_level, checkpoint, ic, horizon, eval_step, truth,
            truth_substeps):
    summary = _run('predict', config_path, out_dir, log_dir, log_level,
                   seed=seed, checkpoint=checkpoint, ic=ic, horizon=horizon, eval_step=eval_step,
                   truth=truth, truth_substeps=truth_substeps)
    metrics = summary['metric_rel'] or [None] * len(summary['trajectories'])
    for path, metric in zip(summary['trajectories'], metrics):
        click.echo(path if metric is None else f"relative_l2_error={metric:.6e} {path}")
    return summary


@cli.command()
@common_options
@click.option('--table', type=click.Choice(['1', '2', '3']), default=None, help='Benchmark table')
@click.option('--scale', type=click.Choice(['paper', 'smoke']), default=None)
@click.option('--workers', type=int, default=None, help='Worker threads for table cells')
@click.option('--progress/--no-progress', default=None, help='Show a progress bar')
def reproduce(config_path, seed, out_dir, log_dir, log_level, table, scale, workers, progress):
    summary = _run('reproduce', config_path, out_dir, log_dir, log_level,
                   seed=seed, table=table, scale=scale, workers=workers, progress=progress)
    click.echo(summary['text'])
    click.echo(summary['table'])
    return summary


def _fail(err: object, name: Optional[str] = None) -> None:
    message = " ".join(str(err).split()) or type(err).__name__
    click.echo(f"rdnn: error[{name or type(err).__name__}]: {message}", err=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the CLI and map failures to exit codes."""
    try:
        result = cli.main(args=list(argv) if argv is not None else None, prog_name='rdnn',
                          standalone_mode=False)
    except click.UsageError as e:
        _fail(e.format_message(), "UsageError")
        return EXIT_USAGE
    except click.Abort:
        _fail("aborted", "Abort")
        return EXIT_USAGE
    except click.ClickException as e:
        _fail(e.format_message(), type(e).__name__)
        return e.exit_code
    except ConfigurationError as e:
        _fail(e)
        return EXIT_USAGE
    except (DataFormatError, OSError) as e:
        _fail(e)
        return EXIT_IO
    except (DivergenceError, EvaluationError, GenerationError, ContractError, RDNNError) as e:
        _fail(e)
        return EXIT_RUNTIME
    return result if isinstance(result, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
