#!python
# -*- Python -*-
"""
dcim-avsr command line.

    dcim-avsr synth --spec run.cfg --out corpus/ --n 64
    dcim-avsr train --stage asr --config run.cfg
    dcim-avsr train --stage avsr --config run.cfg --init-asr run/asr.ckpt --init-vsr run/vsr.ckpt
    dcim-avsr eval --ckpt run/avsr.ckpt --corpus corpus/ --snr 0
    dcim-avsr noise-sweep --ckpt-av run/avsr.ckpt --ckpt-a run/asr.ckpt --corpus corpus/
    dcim-avsr ablate --config run.cfg --modes dual,v2a,a2v
    dcim-avsr verify
    dcim-avsr param-count --config run.cfg

Exit status: 0 success, 1 usage or configuration error, 2 verification
failure, 3 training divergence.
"""

import argparse
import csv
import logging
import os
import sys
from dataclasses import dataclass

from . import checkpoint
from . import tensor as T
from .dcim import DCIMMode
from .errors import AVSRError, DivergenceError, IncompatibleCheckpointError
from .model import build, param_breakdown
from .runconfig import RunConfig
from .synth import SNR_GRID, NoiseSpec, generate_corpus, noisy_corpus, read_corpus, write_corpus
from .training import decode, run_stage
from .verify import run_all
from .VERSION import __doc__ as __version__


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY = 2
EXIT_DIVERGED = 3


@dataclass
class EvalSettings:
    ckpt: str = ''
    corpus: str = ''
    snr: float = None
    seed: int = 0


@dataclass
class SweepSettings:
    ckpt_av: str = ''
    ckpt_a: str = ''
    corpus: str = ''
    seed: int = 0
    snr_grid: tuple = SNR_GRID


@dataclass
class VerifySettings:
    seed: int = 0
    ctc_seeds: int = 50


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, '{0}: error: {1}\n'.format(self.prog, message))


def _run_config(args):
    return RunConfig.from_file(getattr(args, 'config', None), args.set or ())


def _corpora(cfg, args):
    "training and evaluation utterances: from disk when given, else synthesized"
    if getattr(args, 'corpus', None):
        train = read_corpus(args.corpus)
    else:
        train = generate_corpus(cfg.synth, cfg.run.n_train, model_cfg=cfg.model)
    if getattr(args, 'eval_corpus', None):
        held_out = read_corpus(args.eval_corpus)
    elif cfg.run.n_eval:
        held_out = generate_corpus(cfg.synth, cfg.run.n_eval, start=cfg.run.n_train, model_cfg=cfg.model)
    else:
        held_out = []
    return train, held_out


def cmd_synth(args):
    cfg = RunConfig.from_file(args.spec, args.set or ())
    corpus = generate_corpus(cfg.synth, args.n, model_cfg=cfg.model)
    if args.snr is not None:
        corpus = noisy_corpus(corpus, NoiseSpec(snr_db=args.snr, seed=cfg.noise.seed))
    write_corpus(args.out, corpus)
    cfg.write_resolved(args.out)
    print('wrote {0} utterances to {1}'.format(len(corpus), args.out))
    return EXIT_OK


def cmd_train(args):
    cfg = _run_config(args)
    run_dir = args.out or cfg.run.dir
    cfg.write_resolved(run_dir)
    plan = cfg.stage_plan(args.stage, init_asr=args.init_asr, init_vsr=args.init_vsr)
    train, held_out = _corpora(cfg, args)
    model = build(cfg.model, plan.stage, seed=cfg.run.seed)
    result = run_stage(model, plan, train, held_out, cfg.train, run_dir, cfg.specaug)
    last = result.history[-1]
    print('{0}: {1} epochs, loss {2:.4f}, train wer {3:.4f}, eval wer {4:.4f}'.format(
        plan.stage, len(result.history), last.loss, last.train_wer, last.eval_wer))
    print('checkpoint {0}'.format(result.checkpoint))
    return EXIT_OK


def write_hypotheses(path, decoded):
    with open(path, 'w') as fp:
        for uid, ref, hyp in zip(decoded.ids, decoded.refs, decoded.hyps):
            fp.write('{0}\t{1}\t{2}\n'.format(uid, ' '.join(map(str, ref)), ' '.join(map(str, hyp))))


def cmd_eval(args):
    model = checkpoint.load(args.ckpt)
    out_dir = args.out or os.path.dirname(os.path.abspath(args.ckpt))
    cfg = RunConfig(model=model.cfg, noise=NoiseSpec(snr_db=args.snr or 0.0, seed=args.seed))
    cfg.write_resolved(out_dir, extra={'eval': EvalSettings(args.ckpt, args.corpus, args.snr, args.seed)})
    corpus = read_corpus(args.corpus)
    if args.snr is not None:
        corpus = noisy_corpus(corpus, NoiseSpec(snr_db=args.snr, seed=args.seed))
    decoded = decode(model, corpus)
    path = os.path.join(out_dir, 'hypotheses.txt')
    write_hypotheses(path, decoded)
    snr = 'clean' if args.snr is None else '{0:g} dB'.format(args.snr)
    print('WER {0:.4f} over {1} utterances ({2}); hypotheses in {3}'.format(decoded.wer, len(corpus), snr, path))
    return EXIT_OK


def noise_sweep(model_av, model_a, corpus, seed=0, grid=SNR_GRID):
    "rows of (snr, wer_audio_only, wer_av); both models hear the same noise"
    rows = []
    for snr in grid:
        noisy = noisy_corpus(corpus, NoiseSpec(snr_db=snr, seed=seed))
        row = (snr, decode(model_a, noisy).wer, decode(model_av, noisy).wer)
        logger.info('snr %g: audio-only wer %.4f, audio-visual wer %.4f', *row)
        rows.append(row)
    return rows


def cmd_noise_sweep(args):
    model_av = checkpoint.load(args.ckpt_av)
    model_a = checkpoint.load(args.ckpt_a)
    if model_a.variant != 'asr' or model_av.variant != 'avsr':
        raise IncompatibleCheckpointError('noise-sweep needs an avsr and an asr checkpoint, got {0} and {1}'.format(
            model_av.variant, model_a.variant))
    settings = SweepSettings(args.ckpt_av, args.ckpt_a, args.corpus, args.seed)
    RunConfig(model=model_av.cfg, noise=NoiseSpec(seed=args.seed)).write_resolved(
        os.path.dirname(os.path.abspath(args.out)), extra={'sweep': settings})
    rows = noise_sweep(model_av, model_a, read_corpus(args.corpus), seed=args.seed)
    with open(args.out, 'w', newline='') as fp:
        out = csv.writer(fp)
        out.writerow(['snr', 'wer_audio_only', 'wer_av'])
        for snr, wa, wav in rows:
            out.writerow(['{0:g}'.format(snr), '{0:.4f}'.format(wa), '{0:.4f}'.format(wav)])
    for snr, wa, wav in rows:
        print('{0:>5g} dB  audio-only {1:.4f}  audio-visual {2:.4f}'.format(snr, wa, wav))
    print('wrote {0}'.format(args.out))
    return EXIT_OK


def cmd_ablate(args):
    cfg = _run_config(args)
    modes = [m.strip() for m in args.modes.split(',') if m.strip()]
    for m in modes:
        DCIMMode.from_name(m)
    run_dir = args.out or os.path.join(cfg.run.dir, 'ablate')
    cfg.write_resolved(run_dir)
    train, held_out = _corpora(cfg, args)
    if not held_out:
        held_out = train
    noisy = noisy_corpus(held_out, NoiseSpec(snr_db=cfg.run.ablation_snr, seed=cfg.noise.seed))
    rows = []
    for name in modes:
        cfg.model.dcim = DCIMMode.from_name(name)
        plan = cfg.stage_plan('avsr' if args.init_asr else 'avsr_direct',
                              init_asr=args.init_asr, init_vsr=args.init_vsr)
        model = build(cfg.model, 'avsr', seed=cfg.run.seed)
        run_stage(model, plan, train, None, cfg.train, os.path.join(run_dir, name), cfg.specaug)
        mode = cfg.model.dcim
        score = decode(model, noisy).wer
        rows.append([name, mode.direction, mode.purification, mode.completion, mode.layers,
                     param_breakdown(model).get('fusion.dcim_adapters', 0), '{0:.4f}'.format(score)])
        logger.info('ablation %s: eval wer %.4f at %g dB', name, score, cfg.run.ablation_snr)
    path = os.path.join(run_dir, 'ablation.csv')
    with open(path, 'w', newline='') as fp:
        out = csv.writer(fp)
        out.writerow(['mode', 'direction', 'purification', 'completion', 'layers', 'adapter_params', 'eval_wer'])
        out.writerows(rows)
    for row in rows:
        print('{0:<12} {1}'.format(row[0], row[-1]))
    print('wrote {0}'.format(path))
    return EXIT_OK


def cmd_verify(args):
    cfg = RunConfig.preset('toy')
    sys.stdout.write(cfg.text(extra={'verify': VerifySettings(args.seed, args.ctc_seeds)}))
    results = run_all(seed=args.seed, n_seeds=args.ctc_seeds)
    for r in results:
        print(r)
    failed = [r.name for r in results if not r.passed]
    if failed:
        print('FAILED: {0}'.format(', '.join(failed)))
        return EXIT_VERIFY
    print('all {0} checks passed'.format(len(results)))
    return EXIT_OK


def cmd_param_count(args):
    cfg = _run_config(args)
    sys.stdout.write(cfg.text())
    for variant in ('asr', 'vsr', 'avsr'):
        with T.precision('float32'):
            model = build(cfg.model, variant)
        print('{0}:'.format(variant))
        for part, n in param_breakdown(model).items():
            print('  {0:<24} {1:>12,d}'.format(part, n))
        print('  {0:<24} {1:>12,d}'.format('total', model.param_count()))
    return EXIT_OK


def make_parser():
    ap = _Parser(prog='dcim-avsr', description='audio-visual speech recognition with dual conformer interaction')
    ap.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    ap.add_argument('--version', action='version', version='%(prog)s ' + __version__)
    sub = ap.add_subparsers(dest='command', metavar='COMMAND', parser_class=_Parser)
    sub.required = True

    def with_config(p, flag='--config'):
        p.add_argument(flag, default=None, help='run config file (section.key = value lines)')
        p.add_argument('--set', action='append', metavar='SECTION.KEY=VALUE', help='override one config value')

    p = sub.add_parser('synth', help='write a synthetic corpus')
    with_config(p, '--spec')
    p.add_argument('--out', required=True)
    p.add_argument('--n', type=int, required=True)
    p.add_argument('--snr', type=float, default=None, help='mix in white noise at this SNR (dB)')
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser('train', help='train one stage')
    with_config(p)
    p.add_argument('--stage', required=True, choices=('asr', 'vsr', 'avsr', 'avsr_direct'))
    p.add_argument('--init-asr', default=None)
    p.add_argument('--init-vsr', default=None)
    p.add_argument('--corpus', default=None, help='training corpus directory (default: synthesize)')
    p.add_argument('--eval-corpus', default=None)
    p.add_argument('--out', default=None, help='run directory (default: run.dir)')
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('eval', help='word error rate of a checkpoint on a corpus')
    p.add_argument('--ckpt', required=True)
    p.add_argument('--corpus', required=True)
    p.add_argument('--snr', type=float, default=None)
    p.add_argument('--seed', type=int, default=0, help='noise seed')
    p.add_argument('--out', default=None, help='directory for hypotheses.txt (default: next to the checkpoint)')
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('noise-sweep', help='audio-only vs audio-visual WER over the SNR grid')
    p.add_argument('--ckpt-av', required=True)
    p.add_argument('--ckpt-a', required=True)
    p.add_argument('--corpus', required=True)
    p.add_argument('--seed', type=int, default=0, help='noise seed')
    p.add_argument('--out', default='noise_sweep.csv')
    p.set_defaults(func=cmd_noise_sweep)

    p = sub.add_parser('ablate', help='train and score one AVSR model per DCIM mode')
    with_config(p)
    p.add_argument('--modes', default=','.join(DCIMMode.NAMES))
    p.add_argument('--init-asr', default=None)
    p.add_argument('--init-vsr', default=None)
    p.add_argument('--corpus', default=None)
    p.add_argument('--eval-corpus', default=None)
    p.add_argument('--out', default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser('verify', help='run the self-check suite')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--ctc-seeds', type=int, default=50)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser('param-count', help='parameter counts per module')
    with_config(p)
    p.set_defaults(func=cmd_param_count)
    return ap


def main(argv=None):
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        return args.func(args)
    except DivergenceError as e:
        logger.error('%s', e)
        return EXIT_DIVERGED
    except (AVSRError, ValueError, IOError, OSError) as e:
        logger.error('%s: %s', type(e).__name__, e)
        return EXIT_USAGE


if __name__ == '__main__':
    sys.exit(main())
