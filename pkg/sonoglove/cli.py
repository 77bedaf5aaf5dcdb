"""
Command-line interface: `sonoglove <command> [--help | options]`.

Options of every command are read from the `Parameters` section of its
docstring, so the documentation is the option table.
"""
import logging
import re
import sys
from dataclasses import replace

from .config import load_config
from .geometry import TriangleFrame, platform_experiment, write_platform_csv
from .io import ensure_dir, load_checkpoint, read_dataset, save_checkpoint
from .pipeline import (
    FINETUNE_LR, FINETUNE_POSES, MECH_FRAMES, PRETRAIN_LR, PRETRAIN_POSES, StudyResult,
    baseline_metrics, evaluate_dataset, finetune, gen_human_dataset, gen_mech_dataset,
    pretrain, report, run_ablations, run_sensor_study, run_size_study, split_dataset,
    stream_infer)
from .utils import (
    GloveKeyError, GloveValueError, NonFiniteError, StreamAbort, StudyAssertionError,
    write_csv)
from .version import __version__

__all__ = ["main", "COMMANDS"]
log = logging.getLogger(__name__)

# ((opt, type, optional), ... )
RE_OPTS = re.compile(r'\n {4}(\S+)\s{2,}:\s*([^,\n]+)(, optional)?')
# better split method assuming no positional args
RE_SHLEX = re.compile(r'\s*(?<!\S)--?([^\s=]+)(\s+|=|$)')
CASTS = {'int': int, 'float': float, 'str': str}

# The 4 leading spaces are required for consistency
CLI_EXTRA_DOC = r"""
    Global Options
    --------------
    config  : str, optional
        YAML configuration file (schema in `sonoglove.config`).
    log  : str, optional
        CRITICAL|FATAL|ERROR|WARN(ING)|[default: 'INFO']|DEBUG|NOTSET.
"""


def cast(val, typ):
    log.debug((val, typ))
    if typ == 'bool':
        if (val == 'True') or (val == ''):
            return True
        elif val == 'False':
            return False
        raise GloveValueError(val + ' : ' + typ)
    try:
        if typ == 'ints':
            return tuple(int(i) for i in val.split(','))
        return CASTS[typ](val)
    except (KeyError, ValueError):
        raise GloveValueError(val + ' : ' + typ)


def _train_config(cfg, seed, epochs=None, lr=None, default_lr=PRETRAIN_LR, batch_size=None):
    return replace(cfg.train, seed=seed, lr=default_lr if lr is None else lr,
                   epochs=cfg.train.epochs if epochs is None else epochs,
                   batch_size=cfg.train.batch_size if batch_size is None else batch_size)


def _metrics_result(metrics):
    rows = [['mean_error', metrics['mean_error']], ['max_error', metrics['max_error']],
            ['loss', metrics['loss']], ['windows', metrics['count']]]
    rows += [['error_' + f, v] for f, v in metrics['per_finger'].items()]
    return StudyResult(['metric', metrics['unit']], rows)


def _finish(result, out=None):
    report(result, out)
    return 0


def _history(path, history):
    write_csv(path, ['epoch', 'train_loss', 'val_loss'],
              [(i + 1, t, v) for i, (t, v) in enumerate(
                  zip(history['train_loss'], history['val_loss']))])


def cmd_gen_human(cfg, out, poses=None, seed=0, shifted=False, workers=1):
    """
    Generate a simulated human-hand dataset.

    Parameters
    ----------
    out  : str
        Output JSON-lines file.
    poses  : int, optional
        Frames [default: 46000, or 5000 with --shifted].
    seed  : int, optional
        [default: 0].
    shifted  : bool, optional
        Use the shifted ("real glove") domain.
    workers  : int, optional
        Generation processes [default: 1].
    """
    domain = cfg.domain.shifted() if shifted else cfg.domain
    if poses is None:
        poses = FINETUNE_POSES if shifted else PRETRAIN_POSES
    gen_human_dataset(domain, poses, seed, cfg.skeleton, workers, progress=True,
                      out=ensure_dir(out))
    return 0


def cmd_gen_mech(cfg, out, frames=MECH_FRAMES, seed=0, workers=1):
    """
    Generate a mechanical-hand (servo target) dataset.

    Parameters
    ----------
    out  : str
        Output JSON-lines file.
    frames  : int, optional
        [default: 30000].
    seed  : int, optional
        [default: 0].
    workers  : int, optional
        Generation processes [default: 1].
    """
    gen_mech_dataset(frames, seed, cfg.domain.layout, cfg.skeleton,
                     sequence_length=cfg.domain.sequence_length, workers=workers,
                     progress=True, out=ensure_dir(out))
    return 0


def cmd_pretrain(cfg, data, out, epochs=None, lr=None, batch_size=None, seed=0):
    """
    Train a model from initialisation.

    Parameters
    ----------
    data  : str
        Dataset file.
    out  : str
        Checkpoint path (config sidecar and loss curve written alongside).
    epochs  : int, optional
        [default: from --config, else 20].
    lr  : float, optional
        [default: 1e-3].
    batch_size  : int, optional
    seed  : int, optional
        Split, initialisation and shuffling seed [default: 0].
    """
    ds = read_dataset(data)
    config = replace(cfg.model, n_sensors=ds.n_sensors,
                     head='pose' if ds.kind == 'joints' else 'servo', seed=seed)
    res = pretrain(ds, config, _train_config(cfg, seed, epochs, lr, PRETRAIN_LR, batch_size),
                   seed, progress=True)
    save_checkpoint(res.model, ensure_dir(out))
    _history(out + '.loss.csv', res.history)
    return _finish(_metrics_result(res.metrics))


def cmd_finetune(cfg, checkpoint, data, out, epochs=None, lr=None, batch_size=None, seed=0):
    """
    Continue training a checkpoint on another domain.

    Parameters
    ----------
    checkpoint  : str
    data  : str
        Dataset file of the target domain.
    out  : str
        Output checkpoint path.
    epochs  : int, optional
    lr  : float, optional
        [default: 1e-4].
    batch_size  : int, optional
    seed  : int, optional
        [default: 0].
    """
    res = finetune(load_checkpoint(checkpoint), read_dataset(data),
                   _train_config(cfg, seed, epochs, lr, FINETUNE_LR, batch_size), seed,
                   progress=True)
    save_checkpoint(res.model, ensure_dir(out))
    _history(out + '.loss.csv', res.history)
    return _finish(_metrics_result(res.metrics))


def cmd_eval(cfg, checkpoint, data, split='test', seed=0, baseline=False, out=None):
    """
    Evaluate a checkpoint.

    Parameters
    ----------
    checkpoint  : str
    data  : str
    split  : str, optional
        train|val|[default: test]|all.
    seed  : int, optional
        Split seed [default: 0].
    baseline  : bool, optional
        Also report the nearest-neighbour baseline (train split as reference).
    out  : str, optional
        CSV output.
    """
    model, ds = load_checkpoint(checkpoint), read_dataset(data)
    result = _metrics_result(evaluate_dataset(model, ds, seed, split))
    if baseline:
        tr, _, te = split_dataset(ds, seed)
        base = baseline_metrics(tr, ds if split == 'all' else te, model.config.window)
        result.rows.append(['baseline_mean_error', base['mean_error']])
        result.rows.append(['baseline_max_error', base['max_error']])
    return _finish(result, out)


def cmd_ablate(cfg, data, seeds=(0, 1, 2), epochs=None, lr=None, out=None):
    """
    Ablation study (full, w/o seq., w/o atten., w/o skip).

    Parameters
    ----------
    data  : str
    seeds  : ints, optional
        Comma-separated [default: 0,1,2].
    epochs  : int, optional
    lr  : float, optional
    out  : str, optional
        CSV output.
    """
    ds = read_dataset(data)
    config = replace(cfg.model, n_sensors=ds.n_sensors,
                     head='pose' if ds.kind == 'joints' else 'servo')
    return _finish(run_ablations(ds, seeds, config, _train_config(cfg, 0, epochs, lr),
                                 progress=True), out)


def cmd_sensor_study(cfg, poses=FINETUNE_POSES, seeds=(0, 1, 2), epochs=None, lr=None,
                     seed=0, workers=1, out=None):
    """
    Error against sensor count (5-8).

    Parameters
    ----------
    poses  : int, optional
        Frames per dataset [default: 5000].
    seeds  : ints, optional
        [default: 0,1,2].
    epochs  : int, optional
    lr  : float, optional
    seed  : int, optional
        Data seed [default: 0].
    workers  : int, optional
    out  : str, optional
    """
    return _finish(run_sensor_study(
        poses=poses, seeds=seeds, domain=cfg.domain, model_config=cfg.model,
        train_config=_train_config(cfg, 0, epochs, lr), data_seed=seed, workers=workers,
        progress=True), out)


def cmd_size_study(cfg, checkpoint, poses=2000, seed=0, out=None):
    """
    Error of a pose checkpoint on 21.4, 19.2 and 15.5 cm hands.

    Parameters
    ----------
    checkpoint  : str
    poses  : int, optional
        [default: 2000].
    seed  : int, optional
    out  : str, optional
    """
    return _finish(run_size_study(load_checkpoint(checkpoint), poses=poses, seed=seed,
                                  domain=cfg.domain), out)


def cmd_trilat_demo(cfg, steps=1000, noise=0.0005, side=0.1, seed=0, out=None, hist=None):
    """
    Rotating-platform trilateration accuracy demo.

    Parameters
    ----------
    steps  : int, optional
        [default: 1000].
    noise  : float, optional
        Range noise std [default: 0.0005 m].
    side  : float, optional
        Triangle side [default: 0.1 m].
    seed  : int, optional
    out  : str, optional
        CSV of fitted points.
    hist  : str, optional
        CSV of the residual histogram.
    """
    res = platform_experiment(TriangleFrame(side), steps=steps, noise_sigma=noise, seed=seed)
    if out or hist:
        write_platform_csv(res, out or hist + '.points.csv', hist or out + '.hist.csv')
    return _finish(StudyResult(['metric', 'value'], [
        ['radius_mm', 1e3 * res.fit.radius], ['mean_error_mm', 1e3 * res.mean_error],
        ['max_error_mm', 1e3 * float(res.fit.residuals.max())], ['steps', steps]]))


def cmd_stream(cfg, checkpoint, input='-', out='-', carry_state=False, d_max=0.3):
    """
    Replay a sensor wire stream through a checkpoint.

    Parameters
    ----------
    checkpoint  : str
    input  : str, optional
        Wire-format file [default: '-' (stdin)].
    out  : str, optional
        Predictions, one 'frame,values...' line per frame [default: '-' (stdout)].
    carry_state  : bool, optional
        Carry LSTM state across frames instead of re-running the window.
    d_max  : float, optional
        [default: 0.3].
    """
    model = load_checkpoint(checkpoint)
    fin = sys.stdin if input == '-' else open(input)
    try:
        outputs, stats = stream_infer(fin, model, d_max, carry_state)
    finally:
        if fin is not sys.stdin:
            fin.close()
    fout = sys.stdout if out == '-' else open(ensure_dir(out), 'w')
    try:
        for frame, pred in outputs:
            fout.write(','.join([str(frame)] + ['%.6g' % v for v in pred.ravel()]) + '\n')
    finally:
        if fout is not sys.stdout:
            fout.close()
    log.info("stream stats: %s", stats)
    return 0


COMMANDS = {
    'gen-human': cmd_gen_human, 'gen-mech': cmd_gen_mech, 'pretrain': cmd_pretrain,
    'finetune': cmd_finetune, 'eval': cmd_eval, 'ablate': cmd_ablate,
    'sensor-study': cmd_sensor_study, 'size-study': cmd_size_study,
    'trilat-demo': cmd_trilat_demo, 'stream': cmd_stream}


def _usage(name=None):
    if name is None:
        width = max(map(len, COMMANDS))
        return """Usage:
  sonoglove <command> [--help | options]

Options:
  -h, --help     Print this help and exit.
  -v, --version  Print version and exit.

Commands:
""" + ''.join('  %s  %s\n' % (n.ljust(width), f.__doc__.strip().split('\n')[0])
              for n, f in COMMANDS.items())
    d = COMMANDS[name].__doc__ + CLI_EXTRA_DOC
    split = RE_OPTS.split(d)
    opts = zip(split[1::4], split[2::4], split[3::4], split[4::4])
    return "Usage:\n  sonoglove %s [--help | options]\n\nOptions:" % name + ''.join(
        ('\n  --{0}  : {2}{3}' if typ == 'bool' else '\n  --{0}=<{1}>  : {2}{3}').format(
            o.replace('_', '-'), o, typ + (opt or ''), desc.rstrip())
        for o, typ, opt, desc in opts) + '\n'


def main(argv=None, fp=sys.stderr):
    """
    Parameters (internal use only)
    ---------
    argv  : list (default: sys.argv[1:])
    fp  : file-like object for error messages

    Returns
    -------
    exit code: 0 on success, 1 on errors, 2 when a study's assertion fails
    """
    if argv is None:
        argv = sys.argv[1:]
    try:
        log_idx = argv.index('--log')
    except ValueError:
        for i in argv:
            if i.startswith('--log='):
                logLevel = i[len('--log='):]
                break
        else:
            logLevel = 'INFO'
    else:
        logLevel = argv[log_idx + 1]
    logging.basicConfig(level=getattr(logging, logLevel),
                        format="%(levelname)s:%(module)s:%(lineno)d:%(message)s")

    if any(v in argv[:1] for v in ('-v', '--version')):
        sys.stdout.write(__version__ + '\n')
        sys.exit(0)
    elif not argv or argv[0] in ('-h', '--help'):
        sys.stdout.write(_usage())
        sys.exit(0)

    name = argv[0]
    if name not in COMMANDS:
        fp.write("\nError: unknown command %r\n%s" % (name, _usage()))
        return 1
    if any(v in argv[1:] for v in ('-h', '--help')):
        sys.stdout.write(_usage(name))
        sys.exit(0)

    opt_types = {o: (typ, bool(opt)) for o, typ, opt in
                 RE_OPTS.findall(COMMANDS[name].__doc__ + CLI_EXTRA_DOC)}
    log.debug(sorted(opt_types.items()))
    argv = RE_SHLEX.split(' '.join([name] + argv[1:]))
    opts = dict(zip(argv[1::3], argv[3::3]))
    log.debug(opts)
    opts.pop('log', True)

    try:
        kwargs = {}
        for (o, v) in opts.items():
            o = o.replace('-', '_')
            try:
                kwargs[o] = cast(v, opt_types[o][0])
            except KeyError:
                raise GloveKeyError("unknown option --" + o.replace('_', '-'))
        missing = [o for o, (_, optional) in opt_types.items()
                   if not optional and o not in kwargs]
        if missing:
            raise GloveKeyError("missing --" + ", --".join(missing))
        log.debug('args:' + str(kwargs))
        cfg = load_config(kwargs.pop('config', None))
        return COMMANDS[name](cfg, **kwargs)
    except StudyAssertionError as e:
        if e.result is not None:
            report(e.result)
        log.error("study assertion failed: %s", e)
        return 2
    except (GloveValueError, GloveKeyError, NonFiniteError, StreamAbort, OSError) as e:
        fp.write("\nError: %s\nUsage:\n  sonoglove %s [--help | options]\n" % (
            e.args[0] if e.args else e, name))
        return 1
