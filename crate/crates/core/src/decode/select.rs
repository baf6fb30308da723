use std::sync::Arc;

use crate::layout::{Bounds, NodeProps};
use crate::model::{ModelConfig, StepDistribution};

/// One decoded step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Choice {
    /// A node; the parent is chosen by the pointer decoder only.
    Node(NodeProps, Option<usize>),
    Open,
    Close,
    Eos,
}

/// The `width` best permitted entries of `logp`, by decreasing log-probability
/// with ties going to the lower index. Entries at `-inf` are never returned.
pub fn ranked(logp: &[f64], allowed: Option<&[bool]>, width: usize) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = logp
        .iter()
        .enumerate()
        .filter(|(i, v)| allowed.is_none_or(|a| a[*i]) && **v > f64::NEG_INFINITY)
        .map(|(i, v)| (i, *v))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out.truncate(width);
    out
}

const TERMINAL: usize = 1;
const PARENT: usize = 6;

/// A step decided one head at a time: type, terminal flag, the four
/// coordinates and, for the pointer decoder, the parent.
#[derive(Clone, Debug)]
pub(crate) struct Draft {
    pub slot: usize,
    dist: Arc<StepDistribution>,
    allowed_types: Arc<Vec<bool>>,
    stage: usize,
    values: [usize; 6],
}

pub(crate) enum Advance {
    Pending(Draft),
    Done(Choice),
}

impl Draft {
    pub fn new(slot: usize, dist: Arc<StepDistribution>, allowed_types: Vec<bool>) -> Self {
        Self {
            slot,
            dist,
            allowed_types: Arc::new(allowed_types),
            stage: 0,
            values: [0; 6],
        }
    }

    /// The best `width` options for the current head.
    pub fn options(&self, width: usize) -> Vec<(usize, f64)> {
        let d = &self.dist;
        match self.stage {
            0 => ranked(&d.type_logp, Some(&self.allowed_types), width),
            1 => ranked(&d.terminal_logp, None, width),
            2 => ranked(&d.x_logp, None, width),
            3 => ranked(&d.y_logp, None, width),
            4 => ranked(&d.x2_logp, None, width),
            5 => ranked(&d.y2_logp, None, width),
            _ => ranked(d.parent_logp.as_deref().unwrap_or(&[]), None, width),
        }
    }

    pub fn advance(&self, option: usize, cfg: &ModelConfig) -> Advance {
        if self.stage == 0 {
            return match option {
                c if c == cfg.open_class() => Advance::Done(Choice::Open),
                c if c == cfg.close_class() => Advance::Done(Choice::Close),
                c if c >= cfg.eos_class() => Advance::Done(Choice::Eos),
                _ => {
                    let mut next = self.clone();
                    next.values[0] = option;
                    next.stage = TERMINAL;
                    Advance::Pending(next)
                }
            };
        }
        let mut next = self.clone();
        if self.stage < PARENT {
            next.values[self.stage] = option;
        }
        let node = |parent| {
            let v = &next.values;
            let bounds = Bounds::new(v[2] as i32, v[3] as i32, v[4] as i32, v[5] as i32);
            Choice::Node(NodeProps::new(v[0] as u16, v[1] == 1, bounds), parent)
        };
        match self.stage {
            5 if self.dist.parent_logp.is_some() => {
                next.stage = PARENT;
                Advance::Pending(next)
            }
            5 => Advance::Done(node(None)),
            PARENT => Advance::Done(node(Some(option))),
            s => {
                next.stage = s + 1;
                Advance::Pending(next)
            }
        }
    }
}

/// Greedy selection: the argmax of every head in turn (lowest index on ties)
/// and the summed log-probability of the selected entries.
pub fn step_select(
    dist: &StepDistribution,
    allowed_types: &[bool],
    cfg: &ModelConfig,
) -> Option<(Choice, f64)> {
    let mut draft = Draft::new(0, Arc::new(dist.clone()), allowed_types.to_vec());
    let mut logp = 0.0;
    loop {
        let (i, lp) = *draft.options(1).first()?;
        logp += lp;
        match draft.advance(i, cfg) {
            Advance::Pending(d) => draft = d,
            Advance::Done(c) => return Some((c, logp)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    fn onehot(n: usize, hot: usize) -> Vec<f64> {
        (0..n).map(|i| if i == hot { -0.1 } else { -5.0 }).collect()
    }

    fn dist(cfg: &ModelConfig, kind: usize) -> StepDistribution {
        StepDistribution {
            type_logp: onehot(cfg.type_classes(), kind),
            terminal_logp: onehot(2, 1),
            x_logp: onehot(73, 3),
            y_logp: onehot(129, 4),
            x2_logp: onehot(73, 10),
            y2_logp: onehot(129, 20),
            parent_logp: None,
        }
    }

    #[test]
    fn unique_maxima_are_selected() {
        let cfg = ModelConfig::desk(Variant::Vanilla);
        let (c, lp) = step_select(&dist(&cfg, 7), &vec![true; cfg.type_classes()], &cfg).unwrap();
        assert_eq!(
            c,
            Choice::Node(NodeProps::new(7, true, Bounds::new(3, 4, 10, 20)), None)
        );
        assert!((lp - 6.0 * -0.1).abs() < 1e-12);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        assert_eq!(
            ranked(&[-1.0, -0.5, -0.5, -0.7], None, 2),
            vec![(1, -0.5), (2, -0.5)]
        );
    }

    #[test]
    fn disallowed_and_impossible_entries_are_skipped() {
        assert_eq!(
            ranked(
                &[-0.1, f64::NEG_INFINITY, -2.0],
                Some(&[false, true, true]),
                3
            ),
            vec![(2, -2.0)]
        );
    }

    #[test]
    fn special_tokens_end_the_step_after_the_type_head() {
        let cfg = ModelConfig::desk(Variant::Vanilla);
        let (c, lp) = step_select(
            &dist(&cfg, cfg.eos_class()),
            &vec![true; cfg.type_classes()],
            &cfg,
        )
        .unwrap();
        assert_eq!((c, lp), (Choice::Eos, -0.1));
        let mut allowed = vec![true; cfg.type_classes()];
        allowed[cfg.eos_class()] = false;
        let (c, _) = step_select(&dist(&cfg, cfg.eos_class()), &allowed, &cfg).unwrap();
        assert!(matches!(c, Choice::Node(p, None) if p.type_id == 0));
    }

    #[test]
    fn pointer_steps_pick_a_parent() {
        let cfg = ModelConfig::desk(Variant::Pointer);
        let mut d = dist(&cfg, 2);
        d.parent_logp = Some(vec![-3.0, f64::NEG_INFINITY, -0.2]);
        let (c, lp) = step_select(&d, &vec![true; cfg.type_classes()], &cfg).unwrap();
        assert!(matches!(c, Choice::Node(_, Some(2))));
        assert!((lp - (6.0 * -0.1 - 0.2)).abs() < 1e-12);
    }
}
