//! Versioned binary checkpoints for bit-exact resume.
//!
//! A checkpoint stores every piece of mutable run state: student and teacher
//! parameters, optimizer velocities, queue contents, threshold state, the
//! iteration counter, every RNG stream position and both batch sampler
//! positions. It does not store configs or datasets — those are rebuilt
//! deterministically from the experiment config, and a fingerprint guards
//! against restoring into a different setup. All floats round-trip through
//! their bit patterns.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::data::{PairedBatcher, SamplerState};
use crate::error::{Error, Result};
use crate::harness::AnyTrainer;
use crate::rng::StreamState;
use crate::scomatch::{OodMemoryQueue, QueueEntry, ThresholdController};

const MAGIC: &[u8; 8] = b"OSSLCKP1";

fn trainer_tag(trainer: &AnyTrainer) -> u8 {
    match trainer {
        AnyTrainer::Supervised(_) => 0,
        AnyTrainer::FixMatch(_) => 1,
        AnyTrainer::ScoMatch(_) => 2,
    }
}

pub fn save_checkpoint(
    path: &Path,
    trainer: &AnyTrainer,
    batcher: &PairedBatcher,
    fingerprint: u64,
    seed: u64,
) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_u8(trainer_tag(trainer))?;
    w.write_u64::<LittleEndian>(fingerprint)?;
    w.write_u64::<LittleEndian>(seed)?;
    w.write_u64::<LittleEndian>(trainer.iteration())?;
    write_flat(&mut w, &trainer.student().flatten_params())?;
    write_flat(&mut w, &trainer.teacher().flatten_params())?;

    let velocity: &[Vec<f64>] = match trainer {
        AnyTrainer::Supervised(t) => t.optimizer_ref().velocity(),
        AnyTrainer::FixMatch(t) => t.optimizer_ref().velocity(),
        AnyTrainer::ScoMatch(t) => t.optimizer_ref().velocity(),
    };
    w.write_u32::<LittleEndian>(velocity.len() as u32)?;
    for v in velocity {
        write_flat(&mut w, v)?;
    }

    if let AnyTrainer::ScoMatch(t) = trainer {
        let q = t.queue();
        w.write_u32::<LittleEndian>(q.capacity() as u32)?;
        w.write_u32::<LittleEndian>(q.len() as u32)?;
        let dim = q.entries().next().map_or(0, |e| e.features.len());
        w.write_u32::<LittleEndian>(dim as u32)?;
        for e in q.entries() {
            for &v in &e.features {
                w.write_u64::<LittleEndian>(v.to_bits())?;
            }
            w.write_u8(match e.truth_is_ood {
                None => 0,
                Some(false) => 1,
                Some(true) => 2,
            })?;
        }
        let ctrl = t.controller();
        let (count_ood, count_id) = ctrl.counts();
        for v in [
            ctrl.tau(),
            ctrl.tau_min(),
            ctrl.tau_ood(),
            count_ood,
            count_id,
            ctrl.decay(),
        ] {
            w.write_u64::<LittleEndian>(v.to_bits())?;
        }
    }

    let streams: Vec<StreamState> = match trainer {
        AnyTrainer::Supervised(t) => t.rng_states().to_vec(),
        AnyTrainer::FixMatch(t) => t.rng_states().to_vec(),
        AnyTrainer::ScoMatch(t) => t.rng_states().to_vec(),
    };
    w.write_u8(streams.len() as u8)?;
    for s in &streams {
        write_stream(&mut w, s)?;
    }

    let (lab, unlab) = batcher.state();
    write_sampler(&mut w, &lab)?;
    write_sampler(&mut w, &unlab)?;
    w.flush()?;
    Ok(())
}

/// Restores a checkpoint into a freshly built trainer/batcher pair of the
/// same configuration. Returns the restored iteration count.
pub fn restore_checkpoint(
    path: &Path,
    trainer: &mut AnyTrainer,
    batcher: &mut PairedBatcher,
    fingerprint: u64,
    seed: u64,
) -> Result<u64> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let tag = r.read_u8()?;
    if tag != trainer_tag(trainer) {
        return Err(Error::Checkpoint(format!(
            "checkpoint algorithm tag {tag} does not match the configured algorithm"
        )));
    }
    let fp = r.read_u64::<LittleEndian>()?;
    if fp != fingerprint {
        return Err(Error::Checkpoint(
            "checkpoint was written by a different experiment config".into(),
        ));
    }
    let ck_seed = r.read_u64::<LittleEndian>()?;
    if ck_seed != seed {
        return Err(Error::Checkpoint(format!(
            "checkpoint seed {ck_seed} does not match run seed {seed}"
        )));
    }
    let iteration = r.read_u64::<LittleEndian>()?;

    let student_params = read_flat(&mut r)?;
    let teacher_params = read_flat(&mut r)?;
    let n_vel = r.read_u32::<LittleEndian>()? as usize;
    let mut velocity = Vec::with_capacity(n_vel);
    for _ in 0..n_vel {
        velocity.push(read_flat(&mut r)?);
    }

    let mut queue_ctrl: Option<(OodMemoryQueue, ThresholdController)> = None;
    if tag == 2 {
        let capacity = r.read_u32::<LittleEndian>()? as usize;
        let len = r.read_u32::<LittleEndian>()? as usize;
        let dim = r.read_u32::<LittleEndian>()? as usize;
        let mut entries = Vec::with_capacity(len);
        for _ in 0..len {
            let mut features = Vec::with_capacity(dim);
            for _ in 0..dim {
                features.push(f64::from_bits(r.read_u64::<LittleEndian>()?));
            }
            let truth_is_ood = match r.read_u8()? {
                0 => None,
                1 => Some(false),
                2 => Some(true),
                other => {
                    return Err(Error::Checkpoint(format!("bad truth tag {other}")));
                }
            };
            entries.push(QueueEntry {
                features,
                truth_is_ood,
            });
        }
        let queue = OodMemoryQueue::from_entries(capacity, entries)?;
        let mut vals = [0.0f64; 6];
        for v in &mut vals {
            *v = f64::from_bits(r.read_u64::<LittleEndian>()?);
        }
        let ctrl =
            ThresholdController::restore(vals[0], vals[1], vals[2], vals[3], vals[4], vals[5])?;
        queue_ctrl = Some((queue, ctrl));
    }

    let n_streams = r.read_u8()? as usize;
    let mut streams = Vec::with_capacity(n_streams);
    for _ in 0..n_streams {
        streams.push(read_stream(&mut r)?);
    }
    let lab = read_sampler(&mut r)?;
    let unlab = read_sampler(&mut r)?;

    let expected_streams = match trainer {
        AnyTrainer::Supervised(_) => 1,
        AnyTrainer::FixMatch(_) => 2,
        AnyTrainer::ScoMatch(_) => 3,
    };
    if n_streams != expected_streams {
        return Err(Error::Checkpoint(format!(
            "{n_streams} RNG streams for a {expected_streams}-stream trainer"
        )));
    }

    match trainer {
        AnyTrainer::Supervised(t) => {
            let (student, teacher, opt, iter, rngs) = t.parts_mut();
            student.load_params(&student_params)?;
            teacher.load_params(&teacher_params)?;
            load_velocity(opt.velocity_mut(), &velocity)?;
            *iter = iteration;
            *rngs[0] = streams[0].restore();
        }
        AnyTrainer::FixMatch(t) => {
            let (student, teacher, opt, iter, rngs) = t.parts_mut();
            student.load_params(&student_params)?;
            teacher.load_params(&teacher_params)?;
            load_velocity(opt.velocity_mut(), &velocity)?;
            *iter = iteration;
            for (dst, src) in rngs.into_iter().zip(&streams) {
                *dst = src.restore();
            }
        }
        AnyTrainer::ScoMatch(t) => {
            let (student, teacher, opt, queue, ctrl, iter, rngs) = t.parts_mut();
            student.load_params(&student_params)?;
            teacher.load_params(&teacher_params)?;
            load_velocity(opt.velocity_mut(), &velocity)?;
            let (q, c) = queue_ctrl.expect("tag 2 parsed above");
            *queue = q;
            *ctrl = c;
            *iter = iteration;
            for (dst, src) in rngs.into_iter().zip(&streams) {
                *dst = src.restore();
            }
        }
    }
    *batcher = PairedBatcher::from_states(lab, unlab);
    Ok(iteration)
}

fn load_velocity(dst: &mut [Vec<f64>], src: &[Vec<f64>]) -> Result<()> {
    if dst.len() != src.len() || dst.iter().zip(src).any(|(d, s)| d.len() != s.len()) {
        return Err(Error::Checkpoint(
            "optimizer state does not match the model layout".into(),
        ));
    }
    for (d, s) in dst.iter_mut().zip(src) {
        d.copy_from_slice(s);
    }
    Ok(())
}

fn write_flat<W: Write>(w: &mut W, data: &[f64]) -> Result<()> {
    w.write_u64::<LittleEndian>(data.len() as u64)?;
    for &v in data {
        w.write_u64::<LittleEndian>(v.to_bits())?;
    }
    Ok(())
}

fn read_flat<R: Read>(r: &mut R) -> Result<Vec<f64>> {
    let len = r.read_u64::<LittleEndian>()? as usize;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(f64::from_bits(r.read_u64::<LittleEndian>()?));
    }
    Ok(out)
}

fn write_stream<W: Write>(w: &mut W, s: &StreamState) -> Result<()> {
    w.write_all(&s.seed)?;
    w.write_u64::<LittleEndian>(s.stream_id)?;
    w.write_u64::<LittleEndian>(s.word_pos as u64)?;
    w.write_u64::<LittleEndian>((s.word_pos >> 64) as u64)?;
    Ok(())
}

fn read_stream<R: Read>(r: &mut R) -> Result<StreamState> {
    let mut seed = [0u8; 32];
    r.read_exact(&mut seed)?;
    let stream_id = r.read_u64::<LittleEndian>()?;
    let lo = r.read_u64::<LittleEndian>()? as u128;
    let hi = r.read_u64::<LittleEndian>()? as u128;
    Ok(StreamState {
        seed,
        stream_id,
        word_pos: lo | (hi << 64),
    })
}

fn write_sampler<W: Write>(w: &mut W, s: &SamplerState) -> Result<()> {
    w.write_u64::<LittleEndian>(s.n as u64)?;
    w.write_u64::<LittleEndian>(s.batch as u64)?;
    w.write_u64::<LittleEndian>(s.pos as u64)?;
    w.write_u64::<LittleEndian>(s.order.len() as u64)?;
    for &i in &s.order {
        w.write_u32::<LittleEndian>(i)?;
    }
    write_stream(w, &s.rng)
}

fn read_sampler<R: Read>(r: &mut R) -> Result<SamplerState> {
    let n = r.read_u64::<LittleEndian>()? as usize;
    let batch = r.read_u64::<LittleEndian>()? as usize;
    let pos = r.read_u64::<LittleEndian>()? as usize;
    let len = r.read_u64::<LittleEndian>()? as usize;
    let mut order = Vec::with_capacity(len);
    for _ in 0..len {
        order.push(r.read_u32::<LittleEndian>()?);
    }
    let rng = read_stream(r)?;
    Ok(SamplerState {
        n,
        batch,
        pos,
        order,
        rng,
    })
}
