use std::fmt;

use crate::nand::PhysPageAddr;

use super::ModeKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventOp {
    Program,
    Erase,
    Unlock,
    Shutdown,
    Crash,
    Recover,
}

impl EventOp {
    pub fn as_str(self) -> &'static str {
        match self {
            EventOp::Program => "program",
            EventOp::Erase => "erase",
            EventOp::Unlock => "unlock",
            EventOp::Shutdown => "shutdown",
            EventOp::Crash => "crash",
            EventOp::Recover => "recover",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventClass {
    PublicData,
    HiddenData,
    Dummy,
    Relocation,
    MapCommit,
    SlotFill,
    Superblock,
    FormatFill,
    Gc,
    Allocation,
    Collision,
    None,
}

impl EventClass {
    pub fn as_str(self) -> &'static str {
        match self {
            EventClass::PublicData => "public",
            EventClass::HiddenData => "hidden",
            EventClass::Dummy => "dummy",
            EventClass::Relocation => "relocation",
            EventClass::MapCommit => "map-commit",
            EventClass::SlotFill => "slot-fill",
            EventClass::Superblock => "superblock",
            EventClass::FormatFill => "format",
            EventClass::Gc => "gc",
            EventClass::Allocation => "allocation",
            EventClass::Collision => "collision",
            EventClass::None => "-",
        }
    }
}

/// Where an event landed: one page, or a whole block for erases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventTarget {
    Page(PhysPageAddr),
    Block(u32),
}

impl fmt::Display for EventTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventTarget::Page(a) => write!(f, "{a}"),
            EventTarget::Block(b) => write!(f, "{b}:*"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub seq: u64,
    pub tick: u64,
    pub op: EventOp,
    pub mode: ModeKind,
    pub lba: Option<u32>,
    pub target: Option<EventTarget>,
    pub class: EventClass,
}

impl Event {
    /// `seq,tick,op,mode,lba,ppa,class`; absent fields are empty.
    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.seq,
            self.tick,
            self.op.as_str(),
            self.mode.as_str(),
            self.lba.map(|l| l.to_string()).unwrap_or_default(),
            self.target.map(|t| t.to_string()).unwrap_or_default(),
            self.class.as_str()
        )
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct EventLog {
    enabled: bool,
    next_seq: u64,
    events: Vec<Event>,
}

impl EventLog {
    pub fn new(enabled: bool) -> Self {
        Self { enabled, ..Default::default() }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        tick: u64,
        op: EventOp,
        mode: ModeKind,
        lba: Option<u32>,
        target: Option<EventTarget>,
        class: EventClass,
    ) {
        if !self.enabled {
            return;
        }
        self.events.push(Event { seq: self.next_seq, tick, op, mode, lba, target, class });
        self.next_seq += 1;
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn set_enabled(&mut self, on: bool) {
        self.enabled = on;
    }

    pub fn drain(&mut self) -> Vec<Event> {
        std::mem::take(&mut self.events)
    }
}

pub const EVENT_CSV_HEADER: &str = "seq,tick,op,mode,lba,ppa,class";
