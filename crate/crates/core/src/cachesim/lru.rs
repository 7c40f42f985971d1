use rustc_hash::FxHashMap;

const NIL: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Evicted {
    pub line: u64,
    pub dirty: bool,
}

/// One cache level holding line numbers in LRU order.
#[derive(Debug)]
pub(crate) enum LruStore {
    Full(FullLru),
    Sets(SetLru),
}

impl LruStore {
    pub fn fully_associative(lines: usize) -> Self {
        LruStore::Full(FullLru::new(lines))
    }

    pub fn set_associative(lines: usize, ways: usize) -> Self {
        LruStore::Sets(SetLru::new(lines / ways, ways))
    }

    /// Hit test; a hit becomes most recently used.
    pub fn touch(&mut self, line: u64) -> bool {
        match self {
            LruStore::Full(c) => c.touch(line),
            LruStore::Sets(c) => c.touch(line),
        }
    }

    pub fn contains(&self, line: u64) -> bool {
        match self {
            LruStore::Full(c) => c.map.contains_key(&line),
            LruStore::Sets(c) => c.set(line).iter().any(|e| e.line == line),
        }
    }

    /// Inserts an absent line as most recently used.
    pub fn insert(&mut self, line: u64, dirty: bool) -> Option<Evicted> {
        match self {
            LruStore::Full(c) => c.insert(line, dirty),
            LruStore::Sets(c) => c.insert(line, dirty),
        }
    }

    pub fn mark_dirty(&mut self, line: u64) {
        match self {
            LruStore::Full(c) => {
                if let Some(&slot) = c.map.get(&line) {
                    c.nodes[slot as usize].dirty = true;
                }
            }
            LruStore::Sets(c) => {
                if let Some(e) = c.set_mut(line).iter_mut().find(|e| e.line == line) {
                    e.dirty = true;
                }
            }
        }
    }

    /// Drops a line, returning its dirty flag if it was present.
    pub fn remove(&mut self, line: u64) -> Option<bool> {
        match self {
            LruStore::Full(c) => c.remove(line),
            LruStore::Sets(c) => {
                let set = c.set_mut(line);
                let pos = set.iter().position(|e| e.line == line)?;
                Some(set.remove(pos).dirty)
            }
        }
    }

    /// Empties the level and returns the number of dirty lines it held.
    pub fn drain_dirty(&mut self) -> u64 {
        match self {
            LruStore::Full(c) => {
                let n = c
                    .map
                    .values()
                    .filter(|&&slot| c.nodes[slot as usize].dirty)
                    .count() as u64;
                *c = FullLru::new(c.capacity);
                n
            }
            LruStore::Sets(c) => {
                let mut n = 0;
                for set in &mut c.sets {
                    n += set.iter().filter(|e| e.dirty).count() as u64;
                    set.clear();
                }
                n
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    line: u64,
    dirty: bool,
    prev: u32,
    next: u32,
}

/// Fully associative LRU: hash index over an intrusive list, MRU at `head`.
#[derive(Debug)]
pub(crate) struct FullLru {
    capacity: usize,
    map: FxHashMap<u64, u32>,
    nodes: Vec<Node>,
    free: Vec<u32>,
    head: u32,
    tail: u32,
}

impl FullLru {
    fn new(capacity: usize) -> Self {
        Self {
            capacity,
            map: FxHashMap::default(),
            nodes: Vec::new(),
            free: Vec::new(),
            head: NIL,
            tail: NIL,
        }
    }

    fn unlink(&mut self, slot: u32) {
        let Node { prev, next, .. } = self.nodes[slot as usize];
        if prev == NIL {
            self.head = next;
        } else {
            self.nodes[prev as usize].next = next;
        }
        if next == NIL {
            self.tail = prev;
        } else {
            self.nodes[next as usize].prev = prev;
        }
    }

    fn push_front(&mut self, slot: u32) {
        self.nodes[slot as usize].prev = NIL;
        self.nodes[slot as usize].next = self.head;
        if self.head != NIL {
            self.nodes[self.head as usize].prev = slot;
        }
        self.head = slot;
        if self.tail == NIL {
            self.tail = slot;
        }
    }

    fn touch(&mut self, line: u64) -> bool {
        match self.map.get(&line) {
            Some(&slot) => {
                if self.head != slot {
                    self.unlink(slot);
                    self.push_front(slot);
                }
                true
            }
            None => false,
        }
    }

    fn insert(&mut self, line: u64, dirty: bool) -> Option<Evicted> {
        let mut evicted = None;
        if self.map.len() >= self.capacity {
            let victim = self.tail;
            let node = self.nodes[victim as usize];
            self.unlink(victim);
            self.map.remove(&node.line);
            self.free.push(victim);
            evicted = Some(Evicted {
                line: node.line,
                dirty: node.dirty,
            });
        }
        let node = Node {
            line,
            dirty,
            prev: NIL,
            next: NIL,
        };
        let slot = match self.free.pop() {
            Some(slot) => {
                self.nodes[slot as usize] = node;
                slot
            }
            None => {
                self.nodes.push(node);
                (self.nodes.len() - 1) as u32
            }
        };
        self.push_front(slot);
        self.map.insert(line, slot);
        evicted
    }

    fn remove(&mut self, line: u64) -> Option<bool> {
        let slot = self.map.remove(&line)?;
        self.unlink(slot);
        self.free.push(slot);
        Some(self.nodes[slot as usize].dirty)
    }
}

#[derive(Debug, Clone, Copy)]
struct Way {
    line: u64,
    dirty: bool,
}

/// Set-associative LRU; each set is kept MRU-first.
#[derive(Debug)]
pub(crate) struct SetLru {
    ways: usize,
    sets: Vec<Vec<Way>>,
}

impl SetLru {
    fn new(num_sets: usize, ways: usize) -> Self {
        Self {
            ways,
            sets: (0..num_sets).map(|_| Vec::with_capacity(ways)).collect(),
        }
    }

    fn index(&self, line: u64) -> usize {
        (line % self.sets.len() as u64) as usize
    }

    fn set(&self, line: u64) -> &Vec<Way> {
        &self.sets[self.index(line)]
    }

    fn set_mut(&mut self, line: u64) -> &mut Vec<Way> {
        let i = self.index(line);
        &mut self.sets[i]
    }

    fn touch(&mut self, line: u64) -> bool {
        let set = self.set_mut(line);
        match set.iter().position(|w| w.line == line) {
            Some(pos) => {
                let way = set.remove(pos);
                set.insert(0, way);
                true
            }
            None => false,
        }
    }

    fn insert(&mut self, line: u64, dirty: bool) -> Option<Evicted> {
        let ways = self.ways;
        let set = self.set_mut(line);
        let evicted = if set.len() >= ways {
            set.pop().map(|w| Evicted {
                line: w.line,
                dirty: w.dirty,
            })
        } else {
            None
        };
        set.insert(0, Way { line, dirty });
        evicted
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exercise(mut c: LruStore) {
        assert!(c.insert(1, false).is_none());
        assert!(c.insert(2, true).is_none());
        assert!(c.touch(1));
        // 2 is now least recently used
        assert_eq!(
            c.insert(3, false),
            Some(Evicted {
                line: 2,
                dirty: true
            })
        );
        assert!(c.contains(1) && c.contains(3) && !c.contains(2));
        c.mark_dirty(3);
        assert_eq!(c.remove(1), Some(false));
        assert_eq!(c.remove(1), None);
        assert_eq!(c.drain_dirty(), 1);
        assert!(!c.contains(3));
    }

    #[test]
    fn fully_associative_lru() {
        exercise(LruStore::fully_associative(2));
    }

    #[test]
    fn two_way_single_set() {
        exercise(LruStore::set_associative(2, 2));
    }

    #[test]
    fn sets_are_independent() {
        let mut c = LruStore::set_associative(4, 2);
        for line in [0, 2, 1, 3] {
            assert!(c.insert(line, false).is_none());
        }
        // line 4 maps to set 0 and evicts 0, the older of {0, 2}
        assert_eq!(c.insert(4, false).unwrap().line, 0);
        assert!(c.contains(1) && c.contains(3));
    }

    #[test]
    fn slots_are_recycled() {
        let mut c = FullLru::new(3);
        for line in 0..100 {
            c.insert(line, false);
        }
        assert_eq!(c.map.len(), 3);
        assert!(c.nodes.len() <= 4);
    }
}
