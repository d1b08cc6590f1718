use crate::error::Result;
use crate::types::BinaryMask;

pub fn mask_not(m: &BinaryMask) -> BinaryMask {
    m.map(|&b| !b)
}

pub fn mask_and(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask> {
    a.zip_map(b, |&p, &q| p && q)
}

pub fn mask_or(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask> {
    a.zip_map(b, |&p, &q| p || q)
}
