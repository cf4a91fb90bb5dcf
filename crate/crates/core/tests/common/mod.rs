// SPDX-License-Identifier: Apache-2.0

#![allow(dead_code)]

use std::collections::{HashSet, VecDeque};

use duodag::{Block, BlockRef, Committee, DagStore, LeaderSchedule, MacSigner, Round, Transaction, ValidatorId};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Explicit per-round leader lists, rank 0 first.
pub struct TableSchedule(pub Vec<Vec<ValidatorId>>);

impl LeaderSchedule for TableSchedule {
    fn slot_count(&self, round: Round) -> usize {
        self.0.get(round as usize).map_or(0, Vec::len)
    }

    fn leader(&self, round: Round, rank: usize) -> ValidatorId {
        self.0[round as usize][rank]
    }
}

pub fn signer() -> MacSigner {
    MacSigner::new(0)
}

pub fn genesis(committee: &Committee) -> Vec<BlockRef> {
    committee.validators().map(|v| Block::genesis(v).reference()).collect()
}

/// Parents with `author`'s own block first, then the rest in input order.
pub fn own_first(author: ValidatorId, candidates: &[BlockRef]) -> Vec<BlockRef> {
    let own = candidates
        .iter()
        .find(|r| r.author == author)
        .copied()
        .expect("own block among candidates");
    std::iter::once(own)
        .chain(candidates.iter().filter(|r| r.author != author).copied())
        .collect()
}

pub fn add_block(store: &mut DagStore, author: ValidatorId, round: Round, parents: Vec<BlockRef>) -> BlockRef {
    add_variant(store, author, round, parents, 0)
}

/// Block whose payload carries `variant`, so equivocations get distinct digests.
pub fn add_variant(
    store: &mut DagStore,
    author: ValidatorId,
    round: Round,
    parents: Vec<BlockRef>,
    variant: u64,
) -> BlockRef {
    let payload = if variant == 0 {
        vec![]
    } else {
        vec![Transaction { client: u32::MAX, seq: variant, created_at: 0, payload: vec![] }]
    };
    let block = Block::new(author, round, payload, parents, &signer());
    let r = block.reference();
    store.insert(block);
    r
}

/// Rounds `1..=rounds` where every block references every block of the
/// previous round.
pub fn build_full_dag(committee: &Committee, rounds: Round) -> (DagStore, Vec<Vec<BlockRef>>) {
    let mut store = DagStore::new(committee);
    let mut layers = vec![genesis(committee)];
    for round in 1..=rounds {
        let prev = layers.last().unwrap().clone();
        let layer = committee
            .validators()
            .map(|v| add_block(&mut store, v, round, own_first(v, &prev)))
            .collect();
        layers.push(layer);
    }
    (store, layers)
}

/// Every block reachable from `from` over parent edges (inclusive),
/// by plain breadth-first search.
pub fn bfs_reachable(store: &DagStore, from: &BlockRef) -> HashSet<BlockRef> {
    let mut seen = HashSet::from([*from]);
    let mut queue = VecDeque::from([*from]);
    while let Some(r) = queue.pop_front() {
        for p in store.get(&r).expect("stored").parents() {
            if seen.insert(*p) {
                queue.push_back(*p);
            }
        }
    }
    seen
}

/// Random DAG: each block references its author's previous block plus a
/// random choice of other authors (at least `4f + 1` parents in total).
/// Validators in `equivocators` publish two blocks per round.
pub fn random_dag(
    committee: &Committee,
    rounds: Round,
    equivocators: &[ValidatorId],
    seed: u64,
) -> (DagStore, Vec<Vec<BlockRef>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = DagStore::new(committee);
    let mut layers = vec![genesis(committee)];
    let quorum = committee.quorum_threshold();
    for round in 1..=rounds {
        let prev = layers.last().unwrap().clone();
        let mut layer = Vec::new();
        for v in committee.validators() {
            let copies = if equivocators.contains(&v) { 2 } else { 1 };
            for variant in 0..copies {
                let own: Vec<_> = prev.iter().filter(|r| r.author == v).copied().collect();
                let own = *own.choose(&mut rng).unwrap();
                let mut others: Vec<_> = committee.validators().filter(|a| *a != v).collect();
                others.shuffle(&mut rng);
                let count = rng.gen_range(quorum - 1..committee.size());
                let mut parents = vec![own];
                for a in others.into_iter().take(count) {
                    let options: Vec<_> = prev.iter().filter(|r| r.author == a).copied().collect();
                    parents.push(*options.choose(&mut rng).unwrap());
                }
                layer.push(add_variant(&mut store, v, round, parents, variant));
            }
        }
        layers.push(layer);
    }
    (store, layers)
}

/// Named blocks of the decision-rule walkthrough DAG (n = 6, rounds 1-4,
/// two leader slots per round except round 4).
pub struct Walkthrough {
    pub committee: Committee,
    pub store: DagStore,
    pub schedule: TableSchedule,
    pub l1a: BlockRef,
    pub l1b: BlockRef,
    pub l2a: BlockRef,
    pub l2b: BlockRef,
    pub l3a: BlockRef,
    pub l3b: BlockRef,
    pub l4b: BlockRef,
}

/// Validators are written V1..V6 below and stored as 0..5.
pub fn walkthrough() -> Walkthrough {
    let committee = Committee::new(6).unwrap().with_leaders_per_round(2).unwrap();
    let mut store = DagStore::new(&committee);
    let v = |i: u32| ValidatorId(i - 1);
    let mut layers: Vec<Vec<Option<BlockRef>>> = vec![genesis(&committee).into_iter().map(Some).collect()];
    // Parent authors per (round, author); own block first.
    let edges: [&[(u32, &[u32])]; 4] = [
        &[(1, &[1, 2, 3, 4, 5, 6]), (2, &[2, 1, 3, 4, 5, 6]), (3, &[3, 1, 2, 4, 5, 6]),
          (4, &[4, 1, 2, 3, 5, 6]), (5, &[5, 1, 2, 3, 4, 6]), (6, &[6, 1, 2, 3, 4, 5])],
        &[(1, &[1, 2, 3, 5, 6]), (2, &[2, 1, 3, 5, 6]), (3, &[3, 1, 2, 5, 6]),
          (4, &[4, 1, 2, 5, 6]), (5, &[5, 1, 2, 4, 6]), (6, &[6, 1, 2, 4, 5])],
        &[(1, &[1, 2, 3, 4, 6]), (2, &[2, 1, 3, 4, 6]), (3, &[3, 1, 2, 4, 5]),
          (4, &[4, 2, 3, 5, 6]), (5, &[5, 1, 3, 4, 6]), (6, &[6, 1, 2, 3, 5])],
        // V3 has no round-4 block; V5's round-4 block blames its own L3b.
        &[(1, &[1, 2, 3, 4, 6]), (2, &[2, 1, 3, 4, 6]), (4, &[4, 1, 2, 3, 6]),
          (5, &[1, 2, 3, 4, 6]), (6, &[6, 1, 2, 3, 4])],
    ];
    for (i, round_edges) in edges.iter().enumerate() {
        let round = i as Round + 1;
        let prev = layers.last().unwrap().clone();
        let mut layer = vec![None; 6];
        for &(author, parents) in round_edges.iter() {
            let parents = parents.iter().map(|&p| prev[(p - 1) as usize].unwrap()).collect();
            layer[(author - 1) as usize] = Some(add_block(&mut store, v(author), round, parents));
        }
        layers.push(layer);
    }
    let at = |round: usize, author: u32| layers[round][(author - 1) as usize].unwrap();
    let schedule = TableSchedule(vec![
        vec![],
        vec![v(4), v(3)],
        vec![v(5), v(2)],
        vec![v(2), v(5)],
        vec![v(1)],
    ]);
    Walkthrough {
        l1a: at(1, 4),
        l1b: at(1, 3),
        l2a: at(2, 5),
        l2b: at(2, 2),
        l3a: at(3, 2),
        l3b: at(3, 5),
        l4b: at(4, 1),
        committee,
        store,
        schedule,
    }
}
