//! A small fixed-capacity LRU map used by the distance oracle.
//!
//! Entries live in a slab-backed doubly-linked list; a `HashMap` indexes
//! slots by key. A capacity of zero disables the cache entirely, which is
//! how the cache-transparency tests compare cached and uncached query paths.

use std::collections::HashMap;

const NIL: u32 = u32::MAX;

struct Slot<V> {
    key: u64,
    value: V,
    prev: u32,
    next: u32,
}

pub struct LruCache<V> {
    capacity: usize,
    slots: Vec<Slot<V>>,
    index: HashMap<u64, u32>,
    head: u32,
    tail: u32,
    free: Vec<u32>,
}

impl<V> LruCache<V> {
    pub fn new(capacity: usize) -> Self {
        LruCache {
            capacity,
            slots: Vec::new(),
            index: HashMap::new(),
            head: NIL,
            tail: NIL,
            free: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Looks a key up and marks it most recently used.
    pub fn get(&mut self, key: u64) -> Option<&V> {
        let slot = *self.index.get(&key)?;
        self.detach(slot);
        self.push_front(slot);
        Some(&self.slots[slot as usize].value)
    }

    /// Inserts or refreshes an entry, evicting the least recently used one
    /// when the cache is full. A zero-capacity cache stores nothing.
    pub fn insert(&mut self, key: u64, value: V) {
        if self.capacity == 0 {
            return;
        }
        if let Some(&slot) = self.index.get(&key) {
            self.slots[slot as usize].value = value;
            self.detach(slot);
            self.push_front(slot);
            return;
        }
        if self.index.len() == self.capacity {
            let victim = self.tail;
            debug_assert_ne!(victim, NIL);
            self.detach(victim);
            let old_key = self.slots[victim as usize].key;
            self.index.remove(&old_key);
            self.free.push(victim);
        }
        let slot = match self.free.pop() {
            Some(s) => {
                self.slots[s as usize] = Slot { key, value, prev: NIL, next: NIL };
                s
            }
            None => {
                self.slots.push(Slot { key, value, prev: NIL, next: NIL });
                (self.slots.len() - 1) as u32
            }
        };
        self.index.insert(key, slot);
        self.push_front(slot);
    }

    fn detach(&mut self, slot: u32) {
        let (prev, next) = {
            let s = &self.slots[slot as usize];
            (s.prev, s.next)
        };
        if prev != NIL {
            self.slots[prev as usize].next = next;
        } else if self.head == slot {
            self.head = next;
        }
        if next != NIL {
            self.slots[next as usize].prev = prev;
        } else if self.tail == slot {
            self.tail = prev;
        }
        let s = &mut self.slots[slot as usize];
        s.prev = NIL;
        s.next = NIL;
    }

    fn push_front(&mut self, slot: u32) {
        self.slots[slot as usize].next = self.head;
        self.slots[slot as usize].prev = NIL;
        if self.head != NIL {
            self.slots[self.head as usize].prev = slot;
        }
        self.head = slot;
        if self.tail == NIL {
            self.tail = slot;
        }
    }
}
