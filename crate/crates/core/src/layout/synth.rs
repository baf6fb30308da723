use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{Bounds, LayoutNode, LayoutTree, NodeProps, MAX_CHILDREN, MAX_NODES};

/// Shape controls for [`generate_synthetic`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    /// Number of levels, counting the root.
    pub max_depth: usize,
    pub max_children: usize,
    pub type_count: usize,
    /// Chance that a non-root node below the depth limit becomes a container.
    pub expand_probability: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            max_depth: 4,
            max_children: 5,
            type_count: 25,
            expand_probability: 0.5,
        }
    }
}

/// Deterministic random layout: children tile their parent along one axis
/// without overlapping, stored in depth-first preorder with siblings in
/// reading order.
pub fn generate_synthetic(seed: u64, params: &SynthParams) -> LayoutTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let type_count = params.type_count.max(1) as u16;
    let max_children = params.max_children.clamp(1, MAX_CHILDREN);
    let mut nodes: Vec<LayoutNode> = Vec::new();
    let root_type = rng.gen_range(0..type_count);
    // (bounds, type, parent, depth) awaiting emission, popped depth-first.
    let mut stack = vec![(Bounds::screen(), root_type, None::<usize>, 0usize)];
    while let Some((bounds, type_id, parent, depth)) = stack.pop() {
        let index = nodes.len();
        let expand = depth + 1 < params.max_depth
            && (depth == 0 || rng.gen_bool(params.expand_probability.clamp(0.0, 1.0)));
        let mut kids = Vec::new();
        if expand {
            let budget = MAX_NODES.saturating_sub(nodes.len() + stack.len() + 1);
            let wanted = rng.gen_range(1..=max_children).min(budget);
            kids = tile(&mut rng, bounds, wanted);
        }
        nodes.push(LayoutNode::from_props(
            NodeProps::new(type_id, kids.is_empty(), bounds),
            parent,
            depth,
        ));
        for b in kids.into_iter().rev() {
            let t = rng.gen_range(0..type_count);
            stack.push((b, t, Some(index), depth + 1));
        }
    }
    LayoutTree::from_raw(format!("synthetic-{seed}"), nodes)
}

/// Splits `parent` into up to `count` disjoint boxes along one axis, each
/// optionally inset on the cross axis, returned in reading order.
fn tile(rng: &mut ChaCha8Rng, parent: Bounds, count: usize) -> Vec<Bounds> {
    let width = parent.x1 - parent.x0;
    let height = parent.y1 - parent.y0;
    let vertical = if width == height {
        rng.gen_bool(0.5)
    } else {
        rng.gen_bool(if height > width { 0.75 } else { 0.25 })
    };
    let (lo, hi) = if vertical {
        (parent.y0, parent.y1)
    } else {
        (parent.x0, parent.x1)
    };
    let count = count.min((hi - lo) as usize);
    if count == 0 {
        return Vec::new();
    }
    let mut cuts: Vec<i32> = Vec::with_capacity(count + 1);
    let mut interior: Vec<i32> = (lo + 1..hi).collect();
    for _ in 0..count - 1 {
        let i = rng.gen_range(0..interior.len());
        cuts.push(interior.swap_remove(i));
    }
    cuts.push(lo);
    cuts.push(hi);
    cuts.sort_unstable();
    let (cross_lo, cross_hi) = if vertical {
        (parent.x0, parent.x1)
    } else {
        (parent.y0, parent.y1)
    };
    let max_inset = ((cross_hi - cross_lo - 1) / 2).clamp(0, 2);
    let mut out: Vec<Bounds> = cuts
        .windows(2)
        .map(|w| {
            let inset = rng.gen_range(0..=max_inset);
            if vertical {
                Bounds::new(cross_lo + inset, w[0], cross_hi - inset, w[1])
            } else {
                Bounds::new(w[0], cross_lo + inset, w[1], cross_hi - inset)
            }
        })
        .collect();
    out.sort_by_key(|b| (b.y0, b.x0));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::tree::check_tree;

    #[test]
    fn deterministic() {
        let p = SynthParams::default();
        assert_eq!(generate_synthetic(42, &p), generate_synthetic(42, &p));
        assert_ne!(generate_synthetic(42, &p), generate_synthetic(43, &p));
    }

    #[test]
    fn depth_one_is_a_lone_root() {
        let t = generate_synthetic(
            7,
            &SynthParams {
                max_depth: 1,
                ..SynthParams::default()
            },
        );
        assert_eq!(t.len(), 1);
        assert!(t.node(0).terminal);
    }

    #[test]
    fn thousand_seeds_validate_and_tile() {
        let p = SynthParams::default();
        for seed in 0..1000 {
            let t = generate_synthetic(seed, &p);
            check_tree(&t).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
            let children = t.children();
            for kids in &children {
                for (i, &a) in kids.iter().enumerate() {
                    for &b in &kids[i + 1..] {
                        let (a, b) = (t.node(a).bounds, t.node(b).bounds);
                        let overlap = a.x0 < b.x1 && b.x0 < a.x1 && a.y0 < b.y1 && b.y0 < a.y1;
                        assert!(!overlap, "seed {seed}: siblings overlap");
                    }
                }
            }
        }
    }

    #[test]
    fn deep_wide_params_stay_within_limits() {
        let p = SynthParams {
            max_depth: 8,
            max_children: 30,
            type_count: 25,
            expand_probability: 0.9,
        };
        for seed in 0..50 {
            check_tree(&generate_synthetic(seed, &p)).unwrap();
        }
    }
}
