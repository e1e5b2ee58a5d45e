use super::log::{ExecutionLog, OpResult};
use crate::error::{Error, Result};

/// Largest number of successful operations the brute-force check accepts.
pub const ORACLE_MAX_SUCCESSES: usize = 8;

/// Brute-force serializability check: tries every order of the successful
/// operations against a simulated register, then checks that each failed
/// operation saw some value other than its expected one.
pub fn oracle_verify(log: &ExecutionLog) -> Result<bool> {
    log.validate()?;
    let wins: Vec<(i32, i32)> = log.ops.iter().filter(|o| o.ok()).map(|o| (o.old, o.new)).collect();
    if wins.len() > ORACLE_MAX_SUCCESSES {
        return Err(Error::Config(format!(
            "{} successful operations; the oracle handles at most {ORACLE_MAX_SUCCESSES}",
            wins.len()
        )));
    }
    let fails: Vec<i32> = log.ops.iter().filter(|o| o.result == OpResult::Fail).map(|o| o.old).collect();
    let mut used = vec![false; wins.len()];
    let mut held = vec![log.init];
    Ok(search(&wins, &fails, log.final_value, &mut used, &mut held))
}

fn search(wins: &[(i32, i32)], fails: &[i32], fin: i32, used: &mut [bool], held: &mut Vec<i32>) -> bool {
    let cur = *held.last().unwrap();
    if held.len() == wins.len() + 1 {
        return cur == fin && fails.iter().all(|&old| held.iter().any(|&v| v != old));
    }
    for i in 0..wins.len() {
        if used[i] || wins[i].0 != cur {
            continue;
        }
        used[i] = true;
        held.push(wins[i].1);
        let found = search(wins, fails, fin, used, held);
        held.pop();
        used[i] = false;
        if found {
            return true;
        }
    }
    false
}
