//! Synthetic instances and attention records with a planted label signal.
//!
//! One head carries the label: its pooled value is drawn around
//! `pos_center` for POSITIVE and `neg_center` for NEGATIVE. Every other
//! weight is uniform noise in `[0, 1)`.

use crate::attnio::AttentionRecord;
use crate::matcher::{Instance, Label};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub instances: usize,
    pub layers: u16,
    pub heads: u16,
    /// 0-based (layer, head) carrying the signal.
    pub planted: (u16, u16),
    pub pos_center: f64,
    pub neg_center: f64,
    pub spread: f64,
    pub max_span: u16,
    pub dist_threshold: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            instances: 8000,
            layers: 12,
            heads: 12,
            planted: (7, 4),
            pos_center: 0.9,
            neg_center: 0.1,
            spread: 0.05,
            max_span: 3,
            dist_threshold: 3,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedData {
    pub instances: Vec<Instance>,
    pub records: Vec<AttentionRecord>,
}

/// Instances alternate POSITIVE/NEGATIVE and, within each label, NEAR/FAR.
pub fn planted_head(cfg: &PlantedConfig) -> PlantedData {
    let mut rng = SeededRng::new(cfg.seed);
    let mut instances = Vec::with_capacity(cfg.instances);
    let mut records = Vec::with_capacity(cfg.instances);
    for i in 0..cfg.instances {
        let label = if i % 2 == 0 { Label::Positive } else { Label::Negative };
        let far = (i / 2) % 2 == 1;
        let distance = if far {
            cfg.dist_threshold + 1 + rng.index(6)
        } else {
            1 + rng.index(cfg.dist_threshold)
        };
        let sent_id = format!("syn{i}");
        let governor_index = 1 + rng.index(5);
        let governee_index = governor_index + distance;
        let instance_id = Instance::make_id("synthetic", &sent_id, governor_index, governee_index);
        let center = if label.is_positive() { cfg.pos_center } else { cfg.neg_center };
        let value = rng.uniform(center - cfg.spread, center + cfg.spread).clamp(0.0, 1.0) as f32;
        records.push(planted_record(&mut rng, cfg, &instance_id, value));
        instances.push(Instance {
            instance_id,
            sent_id,
            language: "xx".into(),
            governor_index,
            governee_index,
            governor_lemma: format!("verb{}", i % 40),
            pattern_id: label.is_positive().then(|| format!("xx:verb{}:T#0", i % 40)),
            label,
            distance,
            matched_spec_summary: Some(if label.is_positive() {
                "NOUN+Case:elative".into()
            } else {
                "NOUN+Case:inessive".into()
            }),
        });
    }
    PlantedData { instances, records }
}

fn planted_record(rng: &mut SeededRng, cfg: &PlantedConfig, id: &str, value: f32) -> AttentionRecord {
    let tg = 1 + rng.index(cfg.max_span as usize) as u16;
    let td = 1 + rng.index(cfg.max_span as usize) as u16;
    let span = tg as usize * td as usize;
    let n = cfg.layers as usize * cfg.heads as usize * span;
    let mut blocks = [vec![0f32; n], vec![0f32; n]];
    let planted = cfg.planted.0 as usize * cfg.heads as usize + cfg.planted.1 as usize;
    for block in &mut blocks {
        for (h, cells) in block.chunks_mut(span).enumerate() {
            if h == planted {
                for c in cells.iter_mut() {
                    *c = (rng.unit() * value as f64) as f32;
                }
                cells[rng.index(span)] = value;
            } else {
                for c in cells.iter_mut() {
                    *c = rng.unit() as f32;
                }
            }
        }
    }
    let [gov_to_dep, dep_to_gov] = blocks;
    AttentionRecord {
        instance_id: id.to_string(),
        layers: cfg.layers,
        heads: cfg.heads,
        gov_len: tg,
        dep_len: td,
        gov_to_dep,
        dep_to_gov,
    }
}

/// A record of the given shape filled with uniform noise.
pub fn random_record(rng: &mut SeededRng, id: &str, layers: u16, heads: u16, gov_len: u16, dep_len: u16) -> AttentionRecord {
    let n = layers as usize * heads as usize * gov_len as usize * dep_len as usize;
    AttentionRecord {
        instance_id: id.to_string(),
        layers,
        heads,
        gov_len,
        dep_len,
        gov_to_dep: (0..n).map(|_| rng.unit() as f32).collect(),
        dep_to_gov: (0..n).map(|_| rng.unit() as f32).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attnio::{pool, HeadMask, PoolMode};

    #[test]
    fn planted_value_survives_pooling() {
        let cfg = PlantedConfig {
            instances: 40,
            ..PlantedConfig::default()
        };
        let data = planted_head(&cfg);
        let mask = HeadMask::full(12, 12);
        let col = 7 * 12 + 4;
        for (inst, rec) in data.instances.iter().zip(&data.records) {
            rec.validate().unwrap();
            for mode in PoolMode::ALL {
                let v = pool(rec, &mask, mode).unwrap().values[col];
                if inst.label.is_positive() {
                    assert!((0.849..=0.951).contains(&v), "{v}");
                } else {
                    assert!((0.049..=0.151).contains(&v), "{v}");
                }
            }
        }
        let far = data.instances.iter().filter(|i| i.distance > 3).count();
        assert_eq!(far, 20);
    }
}
