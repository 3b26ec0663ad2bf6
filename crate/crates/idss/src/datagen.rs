//! Seeded random rows and their placement on peers.

use idss_core::storage::{Row, TableSchema};
use idss_core::{ColumnType, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Placement;

const WORDS: [&str; 8] = ["Dell", "HP", "Lenovo", "Acer", "Asus", "Apple", "IBM", "Sun"];

/// `rows` random rows for `schema`. Integers are small so that equality and
/// IN predicates match often; nullable columns are null 5% of the time.
pub fn random_rows(schema: &TableSchema, rows: usize, seed: u64) -> Vec<Row> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv(&schema.name));
    (0..rows)
        .map(|_| {
            schema
                .columns
                .iter()
                .map(|c| {
                    if c.nullable && rng.gen_bool(0.05) {
                        return Value::Null;
                    }
                    match c.ty {
                        ColumnType::Integer => Value::Integer(rng.gen_range(0..20)),
                        ColumnType::Real => Value::Real(rng.gen::<f64>()),
                        ColumnType::Text => Value::Text(WORDS[rng.gen_range(0..WORDS.len())].to_string()),
                        ColumnType::Timestamp => Value::Timestamp(rng.gen_range(0..86_400_000)),
                    }
                })
                .collect()
        })
        .collect()
}

/// Peer index for each of `n` rows.
pub fn place(n: usize, peers: usize, placement: Placement, seed: u64) -> Vec<usize> {
    match placement {
        Placement::RoundRobin => (0..n).map(|i| i % peers).collect(),
        Placement::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.rotate_left(17) ^ 0x5bd1_e995);
            (0..n).map(|_| rng.gen_range(0..peers)).collect()
        }
    }
}

fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

#[cfg(test)]
mod tests {
    use super::*;
    use idss_core::storage::ColumnDef;

    #[test]
    fn deterministic_and_typed() {
        let s = TableSchema::new(
            "t",
            vec![ColumnDef::new("a", ColumnType::Integer).not_null(), ColumnDef::new("b", ColumnType::Text)],
        )
        .unwrap();
        let r = random_rows(&s, 50, 3);
        assert_eq!(r, random_rows(&s, 50, 3));
        assert_ne!(r, random_rows(&s, 50, 4));
        assert!(r.iter().all(|row| matches!(row[0], Value::Integer(0..=19))));
    }

    #[test]
    fn placements() {
        assert_eq!(place(5, 2, Placement::RoundRobin, 0), [0, 1, 0, 1, 0]);
        let p = place(1000, 8, Placement::Random, 1);
        assert!(p.iter().all(|i| *i < 8));
        assert_eq!(p, place(1000, 8, Placement::Random, 1));
    }
}
