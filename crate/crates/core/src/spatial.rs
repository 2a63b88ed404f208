//! Grid floor plan, room occupancy and travel times.
//!
//! Plans are YAML documents with an ASCII `grid` (`#` wall, `.` floor,
//! `E` entrance floor cell, any other symbol a room interior) and a `rooms`
//! table keyed by those symbols. There is no path planning: travel takes
//! `ceil(distance / speed)` steps along the straight line to the nearest cell
//! of the destination.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

use crate::des_kernel::{EntityId, ResourceKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoomKind {
    WaitingArea,
    StaffArea,
    TriageRoom,
    ExamRoom,
    ShockRoom,
    Xray,
    Ct,
    Ultrasound,
    FastTrackRoom,
}

impl RoomKind {
    pub fn resource_kind(self) -> Option<ResourceKind> {
        Some(match self {
            RoomKind::WaitingArea | RoomKind::StaffArea => return None,
            RoomKind::TriageRoom => ResourceKind::TriageRoom,
            RoomKind::ExamRoom => ResourceKind::ExamRoom,
            RoomKind::ShockRoom => ResourceKind::ShockRoom,
            RoomKind::Xray => ResourceKind::Xray,
            RoomKind::Ct => ResourceKind::Ct,
            RoomKind::Ultrasound => ResourceKind::Ultrasound,
            RoomKind::FastTrackRoom => ResourceKind::FastTrackRoom,
        })
    }

    pub fn from_resource_kind(kind: ResourceKind) -> Option<RoomKind> {
        Some(match kind {
            ResourceKind::TriageRoom => RoomKind::TriageRoom,
            ResourceKind::ExamRoom => RoomKind::ExamRoom,
            ResourceKind::ShockRoom => RoomKind::ShockRoom,
            ResourceKind::Xray => RoomKind::Xray,
            ResourceKind::Ct => RoomKind::Ct,
            ResourceKind::Ultrasound => RoomKind::Ultrasound,
            ResourceKind::FastTrackRoom => RoomKind::FastTrackRoom,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RoomKind::WaitingArea => "waiting_area",
            RoomKind::StaffArea => "staff_area",
            RoomKind::TriageRoom => "triage_room",
            RoomKind::ExamRoom => "exam_room",
            RoomKind::ShockRoom => "shock_room",
            RoomKind::Xray => "xray",
            RoomKind::Ct => "ct",
            RoomKind::Ultrasound => "ultrasound",
            RoomKind::FastTrackRoom => "fast_track_room",
        }
    }
}

impl fmt::Display for RoomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SpatialError {
    #[error("floor plan parse error: {0}")]
    Parse(String),
    #[error("floor plan {plan}: {reason}")]
    Invalid { plan: String, reason: String },
    #[error("room {0} is at maximum occupancy")]
    RoomFull(String),
    #[error("entity {0} has no position")]
    Unplaced(EntityId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub fn distance(self, other: Cell) -> f64 {
        let dx = (self.x - other.x) as f64;
        let dy = (self.y - other.y) as f64;
        libm::sqrt(dx * dx + dy * dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellKind {
    Wall,
    Floor,
    Room(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub key: char,
    pub id: String,
    pub kind: RoomKind,
    pub max_occupancy: u32,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorPlan {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub cells: Vec<CellKind>,
    pub rooms: Vec<RoomSpec>,
    pub entrance: Cell,
}

#[derive(Deserialize)]
struct RawRoom {
    key: String,
    id: String,
    kind: RoomKind,
    max_occupancy: u32,
}

#[derive(Deserialize)]
struct RawPlan {
    name: String,
    grid: String,
    rooms: Vec<RawRoom>,
}

impl FloorPlan {
    pub fn parse(text: &str) -> Result<FloorPlan, SpatialError> {
        let raw: RawPlan =
            serde_yaml::from_str(text).map_err(|e| SpatialError::Parse(e.to_string()))?;
        let invalid = |reason: String| SpatialError::Invalid {
            plan: raw.name.clone(),
            reason,
        };
        let lines: Vec<&str> = raw
            .grid
            .lines()
            .map(str::trim_end)
            .filter(|l| !l.is_empty())
            .collect();
        let height = lines.len();
        let width = lines.first().map_or(0, |l| l.chars().count());
        if height == 0 || width == 0 {
            return Err(invalid("empty grid".into()));
        }
        if let Some(bad) = lines.iter().position(|l| l.chars().count() != width) {
            return Err(invalid(format!("grid row {bad} has a different width")));
        }
        let mut keys = BTreeMap::new();
        let mut rooms = Vec::with_capacity(raw.rooms.len());
        for r in &raw.rooms {
            let mut chars = r.key.chars();
            let key = match (chars.next(), chars.next()) {
                (Some(c), None) if !matches!(c, '#' | '.' | 'E') => c,
                _ => {
                    return Err(invalid(format!(
                        "room {} has an invalid key {:?}",
                        r.id, r.key
                    )))
                }
            };
            if keys.insert(key, rooms.len()).is_some() {
                return Err(invalid(format!("duplicate room key {key:?}")));
            }
            if r.max_occupancy == 0 {
                return Err(invalid(format!(
                    "room {} must allow at least one occupant",
                    r.id
                )));
            }
            rooms.push(RoomSpec {
                key,
                id: r.id.clone(),
                kind: r.kind,
                max_occupancy: r.max_occupancy,
                cells: vec![],
            });
        }
        let mut cells = Vec::with_capacity(width * height);
        let mut entrance = None;
        for (y, line) in lines.iter().enumerate() {
            for (x, c) in line.chars().enumerate() {
                let cell = Cell {
                    x: x as i32,
                    y: y as i32,
                };
                cells.push(match c {
                    '#' => CellKind::Wall,
                    '.' => CellKind::Floor,
                    'E' => {
                        entrance.get_or_insert(cell);
                        CellKind::Floor
                    }
                    other => match keys.get(&other) {
                        Some(&i) => {
                            rooms[i].cells.push(cell);
                            CellKind::Room(i)
                        }
                        None => {
                            return Err(invalid(format!(
                                "grid symbol {other:?} at ({x}, {y}) has no room entry"
                            )))
                        }
                    },
                });
            }
        }
        let plan = FloorPlan {
            name: raw.name.clone(),
            width,
            height,
            cells,
            rooms,
            entrance: entrance.ok_or_else(|| invalid("grid has no entrance cell 'E'".into()))?,
        };
        plan.check_rooms().map_err(invalid)?;
        Ok(plan)
    }

    fn check_rooms(&self) -> Result<(), String> {
        for (i, room) in self.rooms.iter().enumerate() {
            if room.cells.is_empty() {
                return Err(format!("room {} has no cells", room.id));
            }
            // Flood fill to confirm one connected region.
            let mut seen = vec![room.cells[0]];
            let mut frontier = vec![room.cells[0]];
            while let Some(c) = frontier.pop() {
                for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                    let n = Cell {
                        x: c.x + dx,
                        y: c.y + dy,
                    };
                    match self.kind_at(n) {
                        Some(CellKind::Room(j)) if j == i => {
                            if !seen.contains(&n) {
                                seen.push(n);
                                frontier.push(n);
                            }
                        }
                        Some(CellKind::Room(j)) => {
                            return Err(format!(
                                "rooms {} and {} touch without a wall",
                                room.id, self.rooms[j].id
                            ));
                        }
                        _ => {}
                    }
                }
            }
            if seen.len() != room.cells.len() {
                return Err(format!("room {} is not one connected region", room.id));
            }
        }
        Ok(())
    }

    pub fn kind_at(&self, c: Cell) -> Option<CellKind> {
        if c.x < 0 || c.y < 0 || c.x as usize >= self.width || c.y as usize >= self.height {
            return None;
        }
        Some(self.cells[c.y as usize * self.width + c.x as usize])
    }

    pub fn room_index(&self, id: &str) -> Option<usize> {
        self.rooms.iter().position(|r| r.id == id)
    }

    /// Rooms of a kind in table order.
    pub fn rooms_of(&self, kind: RoomKind) -> impl Iterator<Item = (usize, &RoomSpec)> {
        self.rooms
            .iter()
            .enumerate()
            .filter(move |(_, r)| r.kind == kind)
    }

    pub fn count(&self, kind: RoomKind) -> usize {
        self.rooms_of(kind).count()
    }

    /// Nearest cell of a room to `from`; ties go to the first in row order.
    pub fn nearest_cell(&self, room: usize, from: Cell) -> (Cell, f64) {
        self.rooms[room]
            .cells
            .iter()
            .map(|c| (*c, from.distance(*c)))
            .fold(None, |best: Option<(Cell, f64)>, cand| match best {
                Some(b) if b.1 <= cand.1 => Some(b),
                _ => Some(cand),
            })
            .expect("rooms have cells")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Position {
    pub cell: Cell,
    pub room: Option<usize>,
}

/// Positions of all placed agents and per-room head counts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    positions: BTreeMap<EntityId, Position>,
    counts: Vec<u32>,
}

impl Occupancy {
    pub fn new(plan: &FloorPlan) -> Self {
        Occupancy {
            positions: BTreeMap::new(),
            counts: vec![0; plan.rooms.len()],
        }
    }

    pub fn position(&self, entity: EntityId) -> Option<Position> {
        self.positions.get(&entity).copied()
    }

    pub fn positions(&self) -> impl Iterator<Item = (EntityId, Position)> + '_ {
        self.positions.iter().map(|(e, p)| (*e, *p))
    }

    pub fn occupants(&self, room: usize) -> u32 {
        self.counts[room]
    }

    pub fn corridor_occupants(&self) -> usize {
        self.positions.values().filter(|p| p.room.is_none()).count()
    }

    pub fn placed(&self) -> usize {
        self.positions.len()
    }

    pub fn has_headroom(&self, plan: &FloorPlan, room: usize, extra: u32) -> bool {
        self.counts[room] + extra <= plan.rooms[room].max_occupancy
    }

    fn set(&mut self, entity: EntityId, pos: Position) {
        if let Some(old) = self.positions.insert(entity, pos) {
            if let Some(r) = old.room {
                self.counts[r] -= 1;
            }
        }
        if let Some(r) = pos.room {
            self.counts[r] += 1;
        }
    }

    /// Puts an agent in a room without travel (arrival, shift start).
    pub fn place(
        &mut self,
        plan: &FloorPlan,
        entity: EntityId,
        room: usize,
    ) -> Result<(), SpatialError> {
        if self.position(entity).and_then(|p| p.room) != Some(room)
            && !self.has_headroom(plan, room, 1)
        {
            return Err(SpatialError::RoomFull(plan.rooms[room].id.clone()));
        }
        let cell = plan.nearest_cell(room, plan.entrance).0;
        self.set(
            entity,
            Position {
                cell,
                room: Some(room),
            },
        );
        Ok(())
    }

    /// Puts an agent on the entrance cell in the corridor.
    pub fn place_at_entrance(&mut self, plan: &FloorPlan, entity: EntityId) {
        self.set(
            entity,
            Position {
                cell: plan.entrance,
                room: None,
            },
        );
    }

    /// Plans travel to a room and moves the agent there. Returns the number
    /// of steps the trip takes (at least one).
    pub fn assign_destination(
        &mut self,
        plan: &FloorPlan,
        entity: EntityId,
        room: usize,
        speed: f64,
    ) -> Result<u64, SpatialError> {
        let from = self
            .position(entity)
            .ok_or(SpatialError::Unplaced(entity))?;
        if from.room != Some(room) && !self.has_headroom(plan, room, 1) {
            return Err(SpatialError::RoomFull(plan.rooms[room].id.clone()));
        }
        let (cell, dist) = if from.room == Some(room) {
            (from.cell, 0.0)
        } else {
            plan.nearest_cell(room, from.cell)
        };
        self.set(
            entity,
            Position {
                cell,
                room: Some(room),
            },
        );
        Ok(travel_steps(dist, speed))
    }

    pub fn remove(&mut self, entity: EntityId) {
        if let Some(old) = self.positions.remove(&entity) {
            if let Some(r) = old.room {
                self.counts[r] -= 1;
            }
        }
    }

    /// Same room, or the same corridor cell.
    pub fn proximity_ok(&self, a: EntityId, b: EntityId) -> bool {
        match (self.position(a), self.position(b)) {
            (Some(pa), Some(pb)) => match (pa.room, pb.room) {
                (Some(ra), Some(rb)) => ra == rb,
                (None, None) => pa.cell == pb.cell,
                _ => false,
            },
            _ => false,
        }
    }
}

/// `ceil(distance / speed)` with a one-step minimum.
pub fn travel_steps(distance: f64, speed: f64) -> u64 {
    let steps = libm::ceil(distance / speed - 1e-9);
    if steps < 1.0 {
        1
    } else {
        steps as u64
    }
}

/// Movement speeds in cells per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MovementParams {
    pub patient_speed: f64,
    pub staff_speed: f64,
    /// Speed multiplier while moving equipment.
    pub hauling_multiplier: f64,
}

impl Default for MovementParams {
    fn default() -> Self {
        MovementParams {
            patient_speed: 20.0,
            staff_speed: 30.0,
            hauling_multiplier: 0.5,
        }
    }
}

/// Staff speed after hauling and fatigue slowdown.
pub fn effective_speed(base: f64, hauling: bool, params: &MovementParams, slowdown: f64) -> f64 {
    let s = if hauling {
        base * params.hauling_multiplier
    } else {
        base
    };
    s / slowdown
}

#[cfg(test)]
mod tests {
    use super::*;

    const PLAN: &str = r#"
name: tiny
grid: |
  ############
  #WWWW.#AAA.#
  #WWWW.#AAA.#
  #E.........#
  #SS........#
  ############
rooms:
  - { key: W, id: waiting, kind: waiting_area, max_occupancy: 30 }
  - { key: A, id: exam-1, kind: exam_room, max_occupancy: 2 }
  - { key: S, id: staff, kind: staff_area, max_occupancy: 10 }
"#;

    fn tiny() -> FloorPlan {
        FloorPlan::parse(PLAN).unwrap()
    }

    #[test]
    fn parses_rooms_and_cells() {
        let p = tiny();
        assert_eq!(p.rooms.len(), 3);
        assert_eq!(p.rooms[1].cells.len(), 6);
        assert_eq!(p.count(RoomKind::ExamRoom), 1);
        assert_eq!(p.entrance, Cell { x: 1, y: 3 });
    }

    #[test]
    fn ragged_grid_is_rejected() {
        let ragged = PLAN.replace("#SS........#", "#SS.......#");
        assert!(matches!(
            FloorPlan::parse(&ragged),
            Err(SpatialError::Invalid { .. })
        ));
    }

    #[test]
    fn split_room_is_rejected() {
        let text = r#"
name: split
grid: |
  #######
  #A#A#E#
  #######
rooms:
  - { key: A, id: exam-1, kind: exam_room, max_occupancy: 2 }
"#;
        let err = FloorPlan::parse(text).unwrap_err();
        assert!(err.to_string().contains("connected"), "{err}");
    }

    #[test]
    fn travel_rounds_up_with_minimum() {
        assert_eq!(travel_steps(0.0, 5.0), 1);
        assert_eq!(travel_steps(10.0, 5.0), 2);
        let params = MovementParams::default();
        assert_eq!(
            travel_steps(10.0, effective_speed(5.0, true, &params, 1.0)),
            4
        );
    }

    #[test]
    fn destination_planning_moves_and_counts() {
        let p = tiny();
        let mut occ = Occupancy::new(&p);
        let waiting = p.room_index("waiting").unwrap();
        let exam = p.room_index("exam-1").unwrap();
        occ.place(&p, 1, waiting).unwrap();
        let steps = occ.assign_destination(&p, 1, exam, 1.0).unwrap();
        assert!(steps >= 1);
        assert_eq!(occ.occupants(exam), 1);
        assert_eq!(occ.occupants(waiting), 0);
        assert_eq!(occ.assign_destination(&p, 1, exam, 1.0).unwrap(), 1);
    }

    #[test]
    fn full_room_refuses_entry() {
        let p = tiny();
        let mut occ = Occupancy::new(&p);
        let exam = p.room_index("exam-1").unwrap();
        let waiting = p.room_index("waiting").unwrap();
        occ.place(&p, 1, exam).unwrap();
        occ.place(&p, 2, exam).unwrap();
        occ.place(&p, 3, waiting).unwrap();
        assert!(matches!(
            occ.assign_destination(&p, 3, exam, 1.0),
            Err(SpatialError::RoomFull(_))
        ));
    }

    #[test]
    fn proximity_is_same_room() {
        let p = tiny();
        let mut occ = Occupancy::new(&p);
        let exam = p.room_index("exam-1").unwrap();
        let staff = p.room_index("staff").unwrap();
        let waiting = p.room_index("waiting").unwrap();
        occ.place(&p, 1, exam).unwrap();
        occ.place(&p, 2, staff).unwrap();
        assert!(!occ.proximity_ok(1, 2));
        occ.assign_destination(&p, 2, exam, 5.0).unwrap();
        assert!(occ.proximity_ok(1, 2));
        occ.place(&p, 3, waiting).unwrap();
        occ.place(&p, 4, waiting).unwrap();
        assert!(occ.proximity_ok(3, 4));
    }
}
