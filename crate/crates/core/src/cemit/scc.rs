use crate::rbr::RbrProgram;
use std::collections::HashMap;

/// Strongly connected components of the reachable rule graph.
#[derive(Debug, Clone)]
pub struct LoopPartition {
    /// Components in topological order (callers before callees).
    pub components: Vec<Vec<String>>,
    /// A component is a loop if it has more than one rule or a self edge.
    pub is_loop: Vec<bool>,
    pub component_of: HashMap<String, usize>,
}

impl LoopPartition {
    pub fn loops(&self) -> impl Iterator<Item = &Vec<String>> {
        self.components
            .iter()
            .zip(&self.is_loop)
            .filter(|(_, l)| **l)
            .map(|(c, _)| c)
    }

    pub fn same_loop(&self, a: &str, b: &str) -> bool {
        match (self.component_of.get(a), self.component_of.get(b)) {
            (Some(x), Some(y)) => x == y && self.is_loop[*x],
            _ => false,
        }
    }
}

/// Iterative Tarjan over the rules reachable from the entry.
pub fn scc_loops(rp: &RbrProgram) -> LoopPartition {
    let reach = rp.reachable();
    let names: Vec<&str> = rp
        .rules
        .iter()
        .map(|r| r.name.as_str())
        .filter(|n| reach.contains(n))
        .collect();
    let id: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let succ: Vec<Vec<usize>> = names
        .iter()
        .map(|n| {
            rp.rule(n)
                .unwrap()
                .successors()
                .filter_map(|s| id.get(s).copied())
                .collect()
        })
        .collect();
    let n = names.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comps: Vec<Vec<usize>> = Vec::new();
    let mut counter = 0;
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut work: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut k)) = work.last_mut() {
            if *k < succ[v].len() {
                let w = succ[v][*k];
                *k += 1;
                if index[w] == usize::MAX {
                    index[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    work.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            work.pop();
            if let Some(&(parent, _)) = work.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().unwrap();
                    on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                comp.sort_unstable();
                comps.push(comp);
            }
        }
    }
    // Tarjan yields reverse topological order
    comps.reverse();
    let mut component_of = HashMap::new();
    let mut components = Vec::new();
    let mut is_loop = Vec::new();
    for (ci, comp) in comps.iter().enumerate() {
        let looped = comp.len() > 1 || succ[comp[0]].contains(&comp[0]);
        is_loop.push(looped);
        components.push(comp.iter().map(|&i| names[i].to_string()).collect());
        for &i in comp {
            component_of.insert(names[i].to_string(), ci);
        }
    }
    LoopPartition {
        components,
        is_loop,
        component_of,
    }
}
