use crate::encoder::fnv1a64;

/// Child seed for `(task, purpose)` under a root seed. Every random draw in a
/// run goes through here so a single root value reproduces everything.
pub fn derive_seed(root: u64, task: u32, purpose: &str) -> u64 {
    let mut bytes = Vec::with_capacity(12 + purpose.len());
    bytes.extend_from_slice(&root.to_le_bytes());
    bytes.extend_from_slice(&task.to_le_bytes());
    bytes.extend_from_slice(purpose.as_bytes());
    fnv1a64(&bytes)
}
