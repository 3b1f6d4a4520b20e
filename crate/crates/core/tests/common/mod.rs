#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;
use sprinkle_qo::catalog::{Attribute, Relation, Stats};
use sprinkle_qo::predicate::{ColumnRef, JoinCondition};
use sprinkle_qo::{load_catalog, parse_query, Catalog, Query};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn company() -> Catalog {
    load_catalog(&read_fixture("company.json"), None).unwrap()
}

pub fn tpch() -> Catalog {
    load_catalog(&read_fixture("tpch.json"), None).unwrap()
}

pub fn query(cat: &Catalog, name: &str) -> Query {
    parse_query(&read_fixture(name), cat).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Random schema: relations `r0..`, each with key `k`, value `v` and one
/// foreign-key column per outgoing edge. The edge graph is connected when
/// `connected` is set.
pub struct RandomSchema {
    pub catalog: Catalog,
    pub joins: Vec<JoinCondition>,
    pub relations: usize,
}

pub fn random_schema(
    rng: &mut StdRng,
    max_edges: usize,
    connected: bool,
    overrides: BTreeMap<String, f64>,
) -> RandomSchema {
    let n = rng.gen_range(2..=(max_edges + 1).min(6));
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for i in 1..n {
        if connected || rng.gen_bool(0.7) {
            pairs.push((i, rng.gen_range(0..i)));
        }
    }
    while pairs.len() < max_edges && rng.gen_bool(0.4) {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b {
            pairs.push((a, b));
        }
    }
    pairs.truncate(max_edges);
    if pairs.is_empty() {
        pairs.push((1, 0));
    }
    let cards: Vec<f64> = (0..n).map(|_| rng.gen_range(1..=2000) as f64).collect();
    let mut attrs: Vec<Vec<Attribute>> = (0..n)
        .map(|i| {
            vec![
                Attribute {
                    name: "k".into(),
                    distinct_count: cards[i],
                    is_key: true,
                },
                Attribute {
                    name: "v".into(),
                    distinct_count: (rng.gen_range(1..=50) as f64).min(cards[i]),
                    is_key: false,
                },
            ]
        })
        .collect();
    let mut edges = Vec::new();
    let mut joins = Vec::new();
    for (e, &(from, to)) in pairs.iter().enumerate() {
        let fk = format!("f{e}");
        attrs[from].push(Attribute {
            name: fk.clone(),
            distinct_count: cards[to].min(cards[from]),
            is_key: false,
        });
        let jsf = rng.gen_range(1..=1000) as f64 / 1000.0;
        let (l, r) = (
            ColumnRef::new(format!("r{from}"), fk),
            ColumnRef::new(format!("r{to}"), "k"),
        );
        joins.push(JoinCondition::new(l.clone(), r.clone(), jsf));
        edges.push((l, r, Some(jsf)));
    }
    let relations = (0..n)
        .map(|i| Relation {
            name: format!("r{i}"),
            cardinality: cards[i],
            attributes: attrs[i].clone(),
        })
        .collect();
    let stats = Stats {
        default_ssf: 0.1,
        predicate_ssf_overrides: overrides,
    };
    RandomSchema {
        catalog: Catalog::from_parts(relations, edges, stats).unwrap(),
        joins,
        relations: n,
    }
}

/// Connected subset of `joins` with at most `max` members, grown from a
/// random seed edge.
pub fn connected_subset(
    rng: &mut StdRng,
    joins: &[JoinCondition],
    max: usize,
) -> Vec<JoinCondition> {
    let mut pool: Vec<JoinCondition> = joins.to_vec();
    pool.shuffle(rng);
    let mut picked = vec![pool.remove(0)];
    let target = rng.gen_range(1..=max.max(1));
    while picked.len() < target {
        let touches = |j: &JoinCondition| {
            picked.iter().any(|p| {
                [&p.left.relation, &p.right.relation]
                    .iter()
                    .any(|r| **r == j.left.relation || **r == j.right.relation)
            })
        };
        let Some(i) = pool.iter().position(touches) else {
            break;
        };
        picked.push(pool.remove(i));
    }
    picked
}

pub fn sql(tables: &[String], joins: &[JoinCondition], selects: &[String]) -> String {
    let mut conds: Vec<String> = joins.iter().map(|j| j.canonical()).collect();
    conds.extend(selects.iter().cloned());
    let mut s = format!("select * from {}", tables.join(", "));
    if !conds.is_empty() {
        s.push_str(" where ");
        s.push_str(&conds.join(" and "));
    }
    s
}

pub fn tables_of(joins: &[JoinCondition]) -> Vec<String> {
    let mut t: Vec<String> = joins
        .iter()
        .flat_map(|j| [j.left.relation.clone(), j.right.relation.clone()])
        .collect();
    t.sort();
    t.dedup();
    t
}
