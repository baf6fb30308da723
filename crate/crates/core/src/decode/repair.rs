use crate::layout::{widen, Bounds, LayoutTree};

/// A tree after bounds repair and how many nodes were changed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Repaired {
    pub tree: LayoutTree,
    pub repairs: usize,
}

fn fit(lo: i32, hi: i32, min: i32, max: i32) -> (i32, i32) {
    let (lo, hi) = (lo.min(hi).clamp(min, max), lo.max(hi).clamp(min, max));
    widen(lo, hi, min, max)
}

/// Clips every node after the first `given` into its parent's bounds (the
/// root into the screen), widening boxes left without area. Parents are
/// repaired before their children.
pub fn repair(tree: &LayoutTree, given: usize) -> Repaired {
    let mut nodes = tree.nodes().to_vec();
    let mut repairs = 0;
    for i in given..nodes.len() {
        let outer = nodes[i]
            .parent
            .map_or(Bounds::screen(), |p| nodes[p].bounds);
        let b = nodes[i].bounds;
        let (x0, x1) = fit(b.x0, b.x1, outer.x0, outer.x1);
        let (y0, y1) = fit(b.y0, b.y1, outer.y0, outer.y1);
        let fixed = Bounds::new(x0, y0, x1, y1);
        if fixed != b {
            nodes[i].bounds = fixed;
            repairs += 1;
        }
    }
    Repaired {
        tree: LayoutTree::from_raw(tree.source_id.clone(), nodes),
        repairs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{check_tree, LayoutNode, NodeProps};

    fn tree(child: Bounds) -> LayoutTree {
        LayoutTree::from_raw(
            "t",
            vec![
                LayoutNode::from_props(NodeProps::new(0, false, Bounds::screen()), None, 0),
                LayoutNode::from_props(NodeProps::new(1, true, child), Some(0), 1),
            ],
        )
    }

    #[test]
    fn valid_tree_is_untouched() {
        let t = tree(Bounds::new(0, 0, 10, 10));
        assert_eq!(
            repair(&t, 1),
            Repaired {
                tree: t,
                repairs: 0
            }
        );
    }

    #[test]
    fn overflowing_child_is_clipped() {
        let r = repair(&tree(Bounds::new(0, 0, 80, 64)), 1);
        assert_eq!(r.tree.node(1).bounds, Bounds::new(0, 0, 72, 64));
        assert_eq!(r.repairs, 1);
    }

    #[test]
    fn inverted_and_empty_boxes_become_valid() {
        for b in [
            Bounds::new(10, 10, 5, 5),
            Bounds::new(72, 128, 72, 128),
            Bounds::new(3, 3, 3, 3),
        ] {
            let r = repair(&tree(b), 1);
            check_tree(&r.tree).unwrap();
        }
    }

    #[test]
    fn given_nodes_are_never_changed() {
        let t = tree(Bounds::new(0, 0, 80, 64));
        assert_eq!(repair(&t, 2).tree, t);
    }
}
