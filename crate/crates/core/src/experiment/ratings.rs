//! Empirical arms from a `userId,movieId,rating,timestamp` ratings file.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::instance::EmpiricalArms;

const HEADER: [&str; 4] = ["userId", "movieId", "rating", "timestamp"];

/// Builds one arm per movie from the `top_k` most-rated movies.
///
/// Movies are ranked by rating count, ties going to the smaller movie id.
/// Each arm keeps the first `per_arm_cap` ratings in file order, negated, so
/// the best arm is the movie with the lowest mean rating among them.
pub fn load_ratings_csv(path: impl AsRef<Path>, top_k: usize, per_arm_cap: usize) -> Result<EmpiricalArms> {
    let file = std::fs::File::open(path)?;
    load_ratings(std::io::BufReader::new(file), top_k, per_arm_cap)
}

pub fn load_ratings<R: Read>(reader: R, top_k: usize, per_arm_cap: usize) -> Result<EmpiricalArms> {
    if top_k < 2 {
        return Err(Error::InvalidConfig(format!("top_k must be at least 2, got {top_k}")));
    }
    if per_arm_cap == 0 {
        return Err(Error::InvalidConfig("per_arm_cap must be positive".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 3 || header.iter().take(3).ne(HEADER.iter().take(3).copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}", HEADER.join(",")),
        });
    }

    // movieId -> (count, first ratings)
    let mut movies: HashMap<u64, (usize, Vec<f64>)> = HashMap::new();
    let mut record = csv::StringRecord::new();
    loop {
        let more = rdr.read_record(&mut record).map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| {
            record.get(i).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing field {}", HEADER[i]),
            })
        };
        let movie: u64 = field(1)?.trim().parse().map_err(|e| Error::Parse {
            line,
            message: format!("bad movieId: {e}"),
        })?;
        let rating: f64 = field(2)?.trim().parse().map_err(|e| Error::Parse {
            line,
            message: format!("bad rating: {e}"),
        })?;
        if !rating.is_finite() {
            return Err(Error::Parse {
                line,
                message: "rating is not finite".into(),
            });
        }
        let entry = movies.entry(movie).or_default();
        entry.0 += 1;
        if entry.1.len() < per_arm_cap {
            entry.1.push(-rating);
        }
    }

    if movies.len() < top_k {
        return Err(Error::InsufficientData(format!(
            "{} movies rated, {top_k} requested",
            movies.len()
        )));
    }
    let mut ranked: Vec<(u64, usize, Vec<f64>)> =
        movies.into_iter().map(|(id, (count, pool))| (id, count, pool)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(top_k);
    let labels = ranked.iter().map(|m| m.0).collect();
    let pools = ranked.into_iter().map(|m| m.2).collect();
    EmpiricalArms::new(pools)?.with_labels(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::RewardModel;

    const FIXTURE: &str = "userId,movieId,rating,timestamp\n\
        1,10,5,100\n\
        1,30,1,101\n\
        2,10,4,102\n\
        2,20,3,103\n\
        3,30,1,104\n\
        4,30,1,105\n";

    #[test]
    fn top_two_with_cap() {
        let arms = load_ratings(FIXTURE.as_bytes(), 2, 2).unwrap();
        assert_eq!(arms.labels(), Some(&[30, 10][..]));
        assert_eq!(arms.pools(), &[vec![-1.0, -1.0], vec![-5.0, -4.0]]);
        assert_eq!(arms.best_arm(), Some(0));
    }

    #[test]
    fn count_ties_prefer_smaller_id() {
        let text = "userId,movieId,rating,timestamp\n1,7,2,0\n1,3,4,0\n";
        let arms = load_ratings(text.as_bytes(), 2, 5).unwrap();
        assert_eq!(arms.labels(), Some(&[3, 7][..]));
    }

    #[test]
    fn cap_one_gives_singletons() {
        let arms = load_ratings(FIXTURE.as_bytes(), 3, 1).unwrap();
        assert!(arms.pools().iter().all(|p| p.len() == 1));
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = "userId,movieId,rating,timestamp\n1,10,5,0\n1,x,4,0\n";
        match load_ratings(text.as_bytes(), 2, 5) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn too_few_movies() {
        assert!(matches!(
            load_ratings(FIXTURE.as_bytes(), 4, 2),
            Err(Error::InsufficientData(_))
        ));
    }
}
