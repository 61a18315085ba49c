use std::collections::HashMap;

const PAGE: u64 = 4096;

/// Sparse byte memory. Bytes never written read as zero.
///
/// Alongside the bytes it keeps a shadow map from the address of every
/// pointer-kind store to the provenance of the stored pointer, so that a
/// later pointer load from the same address recovers it. The shadow only
/// feeds observers; execution never consults it.
#[derive(Clone, Debug, Default)]
pub struct Memory {
    pages: HashMap<u64, Box<[u8; PAGE as usize]>>,
    shadow: HashMap<u64, u32>,
}

impl Memory {
    pub fn read(&self, addr: u64, len: u64) -> Vec<u8> {
        (0..len)
            .map(|i| {
                let a = addr.wrapping_add(i);
                self.pages
                    .get(&(a / PAGE))
                    .map_or(0, |p| p[(a % PAGE) as usize])
            })
            .collect()
    }

    pub fn write(&mut self, addr: u64, bytes: &[u8]) {
        for (i, b) in bytes.iter().enumerate() {
            let a = addr.wrapping_add(i as u64);
            let page = self
                .pages
                .entry(a / PAGE)
                .or_insert_with(|| Box::new([0; PAGE as usize]));
            page[(a % PAGE) as usize] = *b;
        }
        self.forget(addr, bytes.len() as u64);
    }

    /// Little-endian integer of `width` bytes.
    pub fn read_uint(&self, addr: u64, width: u64) -> u64 {
        let mut buf = [0u8; 8];
        buf[..width as usize].copy_from_slice(&self.read(addr, width));
        u64::from_le_bytes(buf)
    }

    pub fn write_uint(&mut self, addr: u64, width: u64, v: u64) {
        self.write(addr, &v.to_le_bytes()[..width as usize]);
    }

    pub fn provenance(&self, addr: u64) -> Option<u32> {
        self.shadow.get(&addr).copied()
    }

    pub fn set_provenance(&mut self, addr: u64, prov: Option<u32>) {
        match prov {
            Some(p) => self.shadow.insert(addr, p),
            None => self.shadow.remove(&addr),
        };
    }

    /// Drops shadow entries whose 8 bytes overlap `[addr, addr + len)`.
    fn forget(&mut self, addr: u64, len: u64) {
        if self.shadow.is_empty() {
            return;
        }
        let lo = addr.saturating_sub(7);
        for a in lo..addr.saturating_add(len) {
            self.shadow.remove(&a);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn little_endian_round_trip_across_pages() {
        let mut m = Memory::default();
        m.write_uint(PAGE - 3, 8, 0x1122_3344_5566_7788);
        assert_eq!(m.read_uint(PAGE - 3, 8), 0x1122_3344_5566_7788);
        assert_eq!(m.read_uint(PAGE - 3, 1), 0x88);
        assert_eq!(m.read_uint(0x9999, 4), 0);
    }

    #[test]
    fn overlapping_write_clears_provenance() {
        let mut m = Memory::default();
        m.set_provenance(0x100, Some(3));
        m.write(0x104, &[1]);
        assert_eq!(m.provenance(0x100), None);
        m.set_provenance(0x100, Some(3));
        m.write(0x108, &[1]);
        assert_eq!(m.provenance(0x100), Some(3));
    }
}
