//! Training loop (adaptive-moment optimization over the deep-supervision
//! loss), checkpointing, and batch inference.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, IxDyn};
use rayon::prelude::*;

use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::data::{self, EpochSampler, Preprocess, SamplePair};
use crate::encoder::{self, Vgg16Backbone};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::loss::total_loss;
use crate::model::AccoNet;
use crate::optim::Adam;
use crate::params::{Initializer, ParamStore};
use crate::Scalar;

/// Learning-rate schedule: the initial rate, divided by `decay_factor` once
/// the epoch index reaches `decay_epoch`.
pub fn lr_at(epoch: usize, cfg: &ExperimentConfig) -> f64 {
    if epoch < cfg.decay_epoch {
        cfg.lr
    } else {
        cfg.lr / cfg.decay_factor
    }
}

pub struct BuiltModel<S: Scalar> {
    pub store: ParamStore<S>,
    pub model: AccoNet<S>,
    pub fingerprint: String,
}

/// Construct the network described by a configuration: backbone (random or
/// pretrained), coordination modules, decoder. Parameter order is fixed by
/// construction order, so a seed fully determines the initialization.
pub fn build_model<S: Scalar>(cfg: &ExperimentConfig) -> Result<BuiltModel<S>> {
    cfg.validate()?;
    let schedule = cfg.schedule()?;
    let flags = cfg.flags()?;
    let mut store = ParamStore::new();
    let mut init = Initializer::from_seed(cfg.seed);
    let mut backbone = Vgg16Backbone::new(&mut store, &mut init, schedule);
    if let Some(weights) = &cfg.backbone_weights {
        encoder::load_backbone_weights(&mut store, &mut backbone, weights)?;
    }
    let model = AccoNet::with_backbone(&mut store, &mut init, Box::new(backbone), flags)?;
    Ok(BuiltModel {
        store,
        model,
        fingerprint: cfg.fingerprint()?,
    })
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub loss_trace: Vec<f64>,
    pub epochs_run: usize,
}

struct TrainLog {
    file: fs::File,
}

impl TrainLog {
    fn open(path: &Path) -> Result<Self> {
        let fresh = !path.exists();
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        if fresh {
            writeln!(file, "iteration\tepoch\tlr\tl1\tl2\tl3\tl4\tl5\ttotal")
                .map_err(|e| Error::io(path, e))?;
        }
        Ok(TrainLog { file })
    }

    fn record(&mut self, iteration: usize, epoch: usize, lr: f64, levels: [f64; 5], total: f64) {
        let _ = writeln!(
            self.file,
            "{}\t{}\t{:.6e}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            iteration, epoch, lr, levels[0], levels[1], levels[2], levels[3], levels[4], total
        );
    }
}

fn load_batch<S: Scalar>(
    pairs: &[SamplePair],
    pre: &Preprocess,
    schedule_items: &[(usize, data::Dihedral)],
) -> Result<(ArrayD<S>, ArrayD<S>)> {
    let loaded: Vec<Result<(ndarray::Array3<S>, ndarray::Array2<S>)>> = schedule_items
        .par_iter()
        .map(|(idx, variant)| {
            let (img, mask) = pre.load_pair::<S>(&pairs[*idx])?;
            Ok((variant.apply3(&img), variant.apply2(&mask)))
        })
        .collect();
    let items: Vec<(ndarray::Array3<S>, ndarray::Array2<S>)> =
        loaded.into_iter().collect::<Result<_>>()?;
    Ok(data::make_batch(&items))
}

/// Run the training protocol over the `train` split of `cfg.data_root`,
/// checkpointing every epoch. Aborts on a non-finite loss, reporting the
/// iteration index; interrupted runs resume from a checkpoint via
/// `cfg.resume`.
pub fn train<S: Scalar>(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let pairs = data::scan_split(&cfg.data_root, "train")?;
    if pairs.is_empty() {
        return Err(Error::Dataset(format!(
            "no training pairs under {}",
            cfg.data_root.display()
        )));
    }
    let schedule = cfg.schedule()?;
    let pre = Preprocess::new(schedule.input_size, cfg.input_mean, cfg.input_std);
    let BuiltModel {
        mut store,
        model,
        fingerprint,
    } = build_model::<S>(cfg)?;
    let mut adam = Adam::<S>::new().with_weight_decay(cfg.weight_decay);
    let mut start_epoch = 0usize;
    if let Some(resume) = &cfg.resume {
        let data = checkpoint::load_checkpoint(resume)?;
        if data.fingerprint != fingerprint {
            return Err(Error::Checkpoint(format!(
                "checkpoint fingerprint mismatch: checkpoint has `{}`, configuration resolves to `{}`",
                data.fingerprint, fingerprint
            )));
        }
        checkpoint::apply_params(&mut store, &data)?;
        adam.restore(&store, data.adam_step, &data.adam_m, &data.adam_v)?;
        start_epoch = data.epoch;
    }

    let ckpt_dir = cfg.out_dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let mut log = TrainLog::open(&cfg.out_dir.join("train_log.tsv"))?;

    let sampler = EpochSampler {
        n_pairs: pairs.len(),
        augment: cfg.augment,
    };
    let mut loss_trace: Vec<f64> = Vec::new();
    let mut iteration = start_epoch * sampler.len().div_ceil(cfg.batch_size);
    let mut final_path = ckpt_dir.join(format!("epoch_{start_epoch:03}.ckpt"));
    for epoch in start_epoch..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        let order = sampler.indices(cfg.seed, epoch);
        for chunk in order.chunks(cfg.batch_size) {
            let (images, masks) = load_batch::<S>(&pairs, &pre, chunk)?;
            let mut g = Graph::new(true);
            let out = model.forward(&mut g, &store, images, true)?;
            let (total, parts) = total_loss(&mut g, &out.decoder.maps, &masks, model.flags.loss_mode)?;
            let total_v = parts.total.to_f64();
            if !total_v.is_finite() {
                return Err(Error::NonFiniteLoss { iteration });
            }
            let mut grads = g.backward(&total)?;
            if cfg.grad_clip > 0.0 {
                grads.clip_global_norm(S::from_f64(cfg.grad_clip));
            }
            adam.step(&mut store, &grads, S::from_f64(lr));
            for u in g.take_stat_updates() {
                let momentum = u.momentum;
                let mean = store.value_mut(u.mean_id);
                ndarray::Zip::from(&mut *mean)
                    .and(&u.batch_mean.clone().into_dyn())
                    .for_each(|m, &b| *m = (S::one() - momentum) * *m + momentum * b);
                let var = store.value_mut(u.var_id);
                ndarray::Zip::from(&mut *var)
                    .and(&u.batch_var_unbiased.clone().into_dyn())
                    .for_each(|v, &b| *v = (S::one() - momentum) * *v + momentum * b);
            }
            let mut levels = [0.0f64; 5];
            for (lv, (b, i)) in levels.iter_mut().zip(parts.bce.iter().zip(parts.iou.iter())) {
                *lv = (*b).to_f64() + (*i).to_f64();
            }
            log.record(iteration, epoch, lr, levels, total_v);
            loss_trace.push(total_v);
            iteration += 1;
        }
        if (epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs {
            final_path = ckpt_dir.join(format!("epoch_{:03}.ckpt", epoch + 1));
            checkpoint::save_checkpoint(&final_path, &store, Some(&adam), epoch + 1, &fingerprint)?;
        }
    }
    Ok(TrainOutcome {
        final_checkpoint: final_path,
        initial_loss: loss_trace.first().copied().unwrap_or(0.0),
        final_loss: loss_trace.last().copied().unwrap_or(0.0),
        loss_trace,
        epochs_run: cfg.epochs.saturating_sub(start_epoch),
    })
}

/// Load a checkpoint and write the final saliency map of every image in
/// `image_dir` to `out_dir` as 8-bit PNGs with matching basenames.
/// Evaluation mode is deterministic, so re-running produces identical bytes.
pub fn infer<S: Scalar>(
    cfg: &ExperimentConfig,
    checkpoint_path: &Path,
    image_dir: &Path,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let BuiltModel {
        mut store,
        model,
        fingerprint,
    } = build_model::<S>(cfg)?;
    let data = checkpoint::load_checkpoint(checkpoint_path)?;
    if data.fingerprint != fingerprint {
        return Err(Error::Checkpoint(format!(
            "checkpoint fingerprint mismatch: checkpoint has `{}`, configuration resolves to `{}`",
            data.fingerprint, fingerprint
        )));
    }
    checkpoint::apply_params(&mut store, &data)?;

    let schedule = cfg.schedule()?;
    let pre = Preprocess::new(schedule.input_size, cfg.input_mean, cfg.input_std);
    let mut stems: Vec<(String, PathBuf)> = Vec::new();
    for entry in fs::read_dir(image_dir).map_err(|e| Error::io(image_dir, e))? {
        let entry = entry.map_err(|e| Error::io(image_dir, e))?;
        let path = entry.path();
        let Some(ext) = path.extension().and_then(|e| e.to_str()) else { continue };
        if !data::IMAGE_EXTS.contains(&ext.to_ascii_lowercase().as_str()) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            stems.push((stem.to_string(), path.clone()));
        }
    }
    stems.sort();
    if stems.is_empty() {
        return Err(Error::Dataset(format!(
            "no images found under {}",
            image_dir.display()
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::with_capacity(stems.len());
    for (stem, path) in stems {
        let img = data::load_image_rgb(&path)?;
        let (_, orig_h, orig_w) = img.dim();
        let input = pre.image::<S>(&img);
        let (c, h, w) = input.dim();
        let batch = input
            .into_shape_with_order((1, c, h, w))
            .expect("contiguous")
            .into_dyn();
        let mut g = Graph::new(false);
        let out = model.forward(&mut g, &store, batch, false)?;
        // restore the source resolution so maps align with original masks
        let map = g.value(out.final_map());
        let map4 = map
            .view()
            .into_dimensionality::<ndarray::Ix4>()
            .expect("saliency map is 4-D");
        let map = if (orig_h, orig_w) == (schedule.input_size, schedule.input_size) {
            map.as_ref().clone()
        } else {
            crate::ops::bilinear_resize(&map4, orig_h, orig_w).into_dyn()
        };
        let mut buf = vec![0u8; orig_h * orig_w];
        for i in 0..orig_h {
            for j in 0..orig_w {
                let v = map[IxDyn(&[0, 0, i, j])].to_f64();
                buf[i * orig_w + j] = (v * 255.0).round().clamp(0.0, 255.0) as u8;
            }
        }
        let image = image::GrayImage::from_raw(orig_w as u32, orig_h as u32, buf)
            .expect("buffer matches dimensions");
        let out_path = out_dir.join(format!("{stem}.png"));
        image.save(&out_path).map_err(|e| Error::Image {
            path: out_path.clone(),
            message: e.to_string(),
        })?;
        written.push(out_path);
    }
    Ok(written)
}
