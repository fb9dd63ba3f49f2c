"""Command-line surface binding all pipeline stages into reproducible runs.

Each command reads a JSON config (defaults + overrides), writes its outputs
under --out, and echoes the resolved config there. Exit codes: 0 success,
1 validation error (bad config, missing prerequisite artifact), 2 runtime
fault.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, load_config, save_config, set_override, validate_config

COMMANDS = ["gen-data", "train-affordance", "train-vae", "train-diffusion",
            "train-dam", "train-classifier", "sample", "evaluate", "annotate"]


class MissingArtifact(ConfigError):
    pass


def _thread_cap():
    raw = os.environ.get("AGRF_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def build_parser():
    p = argparse.ArgumentParser(prog="graspkit",
                                description="grasp synthesis pipeline stages")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None, help="JSON config path")
        sp.add_argument("--seed", type=int, default=None, help="override seed")
        sp.add_argument("--out", required=True, help="run directory")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-path config override (repeatable)")
    return p


def _resolve_config(args):
    cfg = load_config(args.config)
    for assignment in args.set:
        set_override(cfg, assignment)
    if args.seed is not None:
        cfg["seed"] = args.seed
    return validate_config(cfg)


def _require(path, what):
    if not os.path.exists(path):
        raise MissingArtifact(f"missing {what}: {path}")
    return path


def _dataset_dir(cfg, out):
    root = cfg["data"]["root"]
    if root is None:
        root = os.path.join(out, "dataset")
    return root


# -- dataset loading -----------------------------------------------------------


def load_dataset(root, split=None):
    """Rebuild GraspSample records from a gen-data run directory."""
    from .dataengine import GraspSample, Manifest
    from .geometry import load_obj, load_ply

    manifest = Manifest.load(_require(os.path.join(root, "manifest.json"),
                                      "dataset manifest"))
    samples = []
    for rec in manifest.records:
        if split is not None and rec.split != split:
            continue
        d = os.path.join(root, rec.path)
        with open(os.path.join(d, "meta.json")) as fh:
            meta = json.load(fh)
        mesh = load_obj(os.path.join(d, "object.obj"))
        mesh.watertight = True
        cloud = load_ply(os.path.join(d, "cloud.ply")).points
        params = np.loadtxt(os.path.join(d, "params.csv"), delimiter=",")
        masks = np.loadtxt(os.path.join(d, "affordance.csv"), delimiter=",",
                           skiprows=1)
        samples.append(GraspSample(
            kind=meta["kind"], class_name=meta["class"], mesh=mesh, cloud=cloud,
            afford_mask=masks[:, 0], contact_mask=masks[:, 1],
            hand_params=params, instruction=meta["instruction"],
            seed=meta["seed"], provenance=meta["provenance"],
            confidence=meta["confidence"]))
    return manifest, samples


def _vocab_from(samples):
    from .encoders import Vocabulary
    return Vocabulary.from_corpus([s.instruction for s in samples])


def _gt_verts(sample):
    from .geometry import hand_forward_np
    v, _ = hand_forward_np(sample.hand_params)
    return v


# -- model (re)construction ----------------------------------------------------


def _build_vae(cfg):
    from .handvae import HandVAE
    return HandVAE(latent_dim=cfg["dim"], rng=np.random.default_rng(cfg["seed"] + 1))


def _build_cond_encoder(cfg, vocab):
    from .encoders import ConditionEncoder
    return ConditionEncoder(vocab, cfg["dim"], np.random.default_rng(cfg["seed"] + 2))


def _build_denoiser(cfg):
    from .diffusion import DenoiserNet
    return DenoiserNet(latent_dim=cfg["dim"], cond_dim=3 * cfg["dim"],
                       rng=np.random.default_rng(cfg["seed"] + 3))


def _build_refiner(cfg):
    from .refine import LatentRefiner
    return LatentRefiner(cfg["dim"], cfg["heads"], np.random.default_rng(cfg["seed"] + 4))


def _schedule(cfg):
    from .diffusion import NoiseSchedule
    s = cfg["schedule"]
    return NoiseSchedule(s["steps"], s["beta_start"], s["beta_end"])


def _save_module(path, prefix, module):
    from .nn import params_to_dict
    save_checkpoint(path, params_to_dict(prefix, module.params()))


def _load_module(path, prefix, module, what):
    from .nn import load_params_from_dict
    load_params_from_dict(prefix, module.params(),
                          load_checkpoint(_require(path, what)))
    return module


# -- commands ------------------------------------------------------------------


def cmd_gen_data(cfg, out):
    from .dataengine import run_engine
    # gen-data emits a fully ground-truth corpus; `annotate` exercises the
    # pseudo-label loop on a partially seeded one
    manifest = run_engine(_dataset_dir(cfg, out), classes=cfg["data"]["classes"],
                          per_class=cfg["data"]["per_class"], seed=cfg["seed"],
                          seed_label_frac=1.0, n_points=cfg["data"]["n_points"])
    print(f"wrote {len(manifest.records)} samples to {manifest.root}")
    return 0


def cmd_annotate(cfg, out):
    from .dataengine import run_engine
    manifest = run_engine(_dataset_dir(cfg, out), classes=cfg["data"]["classes"],
                          per_class=cfg["data"]["per_class"], seed=cfg["seed"],
                          seed_label_frac=cfg["data"]["seed_label_frac"],
                          max_rounds=cfg["data"]["max_rounds"],
                          n_points=cfg["data"]["n_points"])
    n_pseudo = sum(r.provenance == "pseudo" for r in manifest.records)
    print(f"annotation: {manifest.rounds_run} rounds, {n_pseudo} pseudo-labels, "
          f"warning={manifest.warning}")
    return 0 if manifest.warning is None else 2


def cmd_train_affordance(cfg, out):
    from .affordance import AffordanceNet, affordance_train
    _, samples = load_dataset(_dataset_dir(cfg, out))
    vocab = _vocab_from(samples)
    st = cfg["stages"]["affordance"]
    net = AffordanceNet(vocab, dim=cfg["dim"], hidden=st["hidden"],
                        rng=np.random.default_rng(cfg["seed"]))
    data = [(s.cloud, s.instruction, s.afford_mask) for s in samples
            if s.afford_mask.any()]
    curve = affordance_train(net, data, epochs=st["epochs"], lr=st["lr"],
                             batch_size=st["batch"], seed=cfg["seed"],
                             lambda1=cfg["losses"]["lambda_dice"],
                             alpha=cfg["losses"]["focal_alpha"],
                             gamma=cfg["losses"]["focal_gamma"])
    vocab.save(os.path.join(out, "vocab.json"))
    _save_module(os.path.join(out, "affordance.agrf"), "affordance", net)
    print(f"affordance loss {curve[0]:.4f} -> {curve[-1]:.4f}")
    return 0


def cmd_train_vae(cfg, out):
    from .handvae import vae_train
    _, samples = load_dataset(_dataset_dir(cfg, out))
    st = cfg["stages"]["vae"]
    vae = _build_vae(cfg)
    data = [(s.hand_params, _gt_verts(s)) for s in samples]
    curve = vae_train(vae, data, epochs=st["epochs"], lr=st["lr"],
                      batch_size=st["batch"], seed=cfg["seed"],
                      lambda_param=cfg["losses"]["lambda_param"],
                      lambda_mesh=st.get("lambda_mesh",
                                         cfg["losses"]["lambda_mesh"]),
                      beta_kl=cfg["losses"]["beta_kl"],
                      lr_decay=st.get("lr_decay", 1.0))
    _save_module(os.path.join(out, "vae.agrf"), "vae", vae)
    print(f"vae loss {curve[0]:.4f} -> {curve[-1]:.4f}")
    return 0


def cmd_train_diffusion(cfg, out):
    from .diffusion import diffusion_train
    from .encoders import ConditionEncoder
    _, samples = load_dataset(_dataset_dir(cfg, out))
    vocab = _vocab_from(samples)
    vae = _load_module(os.path.join(out, "vae.agrf"), "vae", _build_vae(cfg),
                       "VAE checkpoint (run train-vae)")
    st = cfg["stages"]["diffusion"]
    enc = _build_cond_encoder(cfg, vocab)
    den = _build_denoiser(cfg)
    data = []
    for s in samples:
        z0, _, _ = vae.encode(_gt_verts(s))
        aff4 = ConditionEncoder.afford_input(s.cloud, s.afford_mask)
        data.append((z0.data, s.instruction, s.cloud, aff4))
    curve = diffusion_train(den, enc, data, _schedule(cfg), epochs=st["epochs"],
                            lr=st["lr"], batch_size=st["batch"], seed=cfg["seed"],
                            train_encoder=st.get("train_encoder", True),
                            lr_decay=st.get("lr_decay", 1.0))
    _save_module(os.path.join(out, "denoiser.agrf"), "denoiser", den)
    _save_module(os.path.join(out, "cond_encoder.agrf"), "cond_encoder", enc)
    print(f"diffusion loss {curve[0]:.4f} -> {curve[-1]:.4f}")
    return 0


def cmd_train_dam(cfg, out):
    import types
    from .encoders import ConditionEncoder
    from .refine import refiner_train
    _, samples = load_dataset(_dataset_dir(cfg, out))
    vocab = _vocab_from(samples)
    vae = _load_module(os.path.join(out, "vae.agrf"), "vae", _build_vae(cfg),
                       "VAE checkpoint (run train-vae)")
    enc = _load_module(os.path.join(out, "cond_encoder.agrf"), "cond_encoder",
                       _build_cond_encoder(cfg, vocab),
                       "condition encoder checkpoint (run train-diffusion)")
    den = _load_module(os.path.join(out, "denoiser.agrf"), "denoiser",
                       _build_denoiser(cfg),
                       "denoiser checkpoint (run train-diffusion)")
    st = cfg["stages"]["dam"]
    refiner = _build_refiner(cfg)
    dataset = []
    for s in samples:
        masks = s.contact_mask[:, None]
        if not masks.any():
            masks = np.ones_like(masks)
        dataset.append(dict(
            gt_params=s.hand_params, gt_verts=_gt_verts(s), gt_mesh=s.mesh,
            obj_points=s.cloud, contact_masks=masks, instruction=s.instruction,
            afford_points4=ConditionEncoder.afford_input(s.cloud, s.afford_mask)))
    frozen = types.SimpleNamespace(vae=vae, denoiser=den, cond_encoder=enc)
    lo = cfg["losses"]
    curve = refiner_train(refiner, frozen, dataset, _schedule(cfg),
                          epochs=st["epochs"], lr=st["lr"], batch_size=st["batch"],
                          seed=cfg["seed"],
                          lambdas=(lo["lambda_param"], lo["lambda_mesh"],
                                   lo["lambda_consistency"], lo["lambda_contact"],
                                   lo["lambda_penetration"]),
                          tau=lo["tau"])
    _save_module(os.path.join(out, "refiner.agrf"), "refiner", refiner)
    print(f"dam loss {curve[0]:.4f} -> {curve[-1]:.4f}")
    return 0


def cmd_train_classifier(cfg, out):
    from .dataengine import AFFORDANCE_CLASSES
    from .metrics import GraspClassifier, classifier_train
    _, samples = load_dataset(_dataset_dir(cfg, out))
    st = cfg["stages"]["classifier"]
    clf = GraspClassifier(n_points=st["n_points"], dim=st["dim"],
                          rng=np.random.default_rng(cfg["seed"] + 5))
    data = [(s.hand_cloud(st["n_points"], seed=s.seed), s.cloud,
             AFFORDANCE_CLASSES.index(s.class_name)) for s in samples]
    curve = classifier_train(clf, data, epochs=st["epochs"], lr=st["lr"],
                             batch_size=st["batch"], seed=cfg["seed"])
    _save_module(os.path.join(out, "classifier.agrf"), "classifier", clf)
    print(f"classifier loss {curve[0]:.4f} -> {curve[-1]:.4f}")
    return 0


def _load_bundle(cfg, out, samples):
    import types
    vocab = _vocab_from(samples)
    vae = _load_module(os.path.join(out, "vae.agrf"), "vae", _build_vae(cfg),
                       "VAE checkpoint (run train-vae)")
    enc = _load_module(os.path.join(out, "cond_encoder.agrf"), "cond_encoder",
                       _build_cond_encoder(cfg, vocab),
                       "condition encoder checkpoint (run train-diffusion)")
    den = _load_module(os.path.join(out, "denoiser.agrf"), "denoiser",
                       _build_denoiser(cfg),
                       "denoiser checkpoint (run train-diffusion)")
    refiner = _load_module(os.path.join(out, "refiner.agrf"), "refiner",
                           _build_refiner(cfg),
                           "refiner checkpoint (run train-dam)")
    return types.SimpleNamespace(vae=vae, denoiser=den, cond_encoder=enc,
                                 refiner=refiner, schedule=_schedule(cfg),
                                 affordance=None)


def cmd_sample(cfg, out):
    from .geometry import TriangleMesh, save_obj
    from .geometry.hand import hand_template
    from .metrics import sample_grasp
    _, samples = load_dataset(_dataset_dir(cfg, out))
    bundle = _load_bundle(cfg, out, samples)
    faces = hand_template()["faces"]
    sample_dir = os.path.join(out, "samples")
    os.makedirs(sample_dir, exist_ok=True)
    steps = cfg["ddim"]["steps"]
    for i, s in enumerate(samples):
        seed = cfg["seed"] + i
        _, verts, _ = sample_grasp(bundle, s, seed, ddim_steps=steps,
                                   eta=cfg["ddim"]["eta"])
        save_obj(os.path.join(sample_dir, f"hand_{i:04d}.obj"),
                 TriangleMesh(verts, faces))
        with open(os.path.join(sample_dir, f"hand_{i:04d}.json"), "w") as fh:
            json.dump({"seed": seed, "steps": steps, "instruction": s.instruction},
                      fh, indent=2, sort_keys=True)
    print(f"wrote {len(samples)} sampled grasps to {sample_dir}")
    return 0


def cmd_evaluate(cfg, out):
    from .metrics import GraspClassifier, evaluate
    _, samples = load_dataset(_dataset_dir(cfg, out))
    bundle = _load_bundle(cfg, out, samples)
    st = cfg["stages"]["classifier"]
    clf = _load_module(os.path.join(out, "classifier.agrf"), "classifier",
                       GraspClassifier(n_points=st["n_points"], dim=st["dim"]),
                       "classifier checkpoint (run train-classifier)")
    report = evaluate(bundle, samples, clf, seed=cfg["seed"],
                      ddim_steps=cfg["ddim"]["steps"], eta=cfg["ddim"]["eta"],
                      k=cfg["eval"]["k"], tau=cfg["losses"]["tau"],
                      voxel_resolution=cfg["eval"]["voxel_resolution"],
                      csv_path=os.path.join(out, "eval_report.csv"),
                      n_workers=_thread_cap())
    print(f"penetration {report.penetration_volume_cm3:.3f} cm3, "
          f"contact {report.contact_ratio_pct:.1f}%, "
          f"entropy {report.entropy_nats:.3f}, "
          f"cluster size {report.cluster_size_cm:.2f} cm, "
          f"ACC {report.semantic_acc_pct:.1f}%")
    return 0


_DISPATCH = {
    "gen-data": cmd_gen_data,
    "train-affordance": cmd_train_affordance,
    "train-vae": cmd_train_vae,
    "train-diffusion": cmd_train_diffusion,
    "train-dam": cmd_train_dam,
    "train-classifier": cmd_train_classifier,
    "sample": cmd_sample,
    "evaluate": cmd_evaluate,
    "annotate": cmd_annotate,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
    except (ConfigError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    os.makedirs(args.out, exist_ok=True)
    save_config(cfg, os.path.join(args.out, "config.json"))
    try:
        return _DISPATCH[args.command](cfg, args.out)
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime fault
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
