//! Deterministic autopilot simulator producing traces in the line format.
//!
//! Every tick runs `tick()` → `readSensors()`, `accelerate(step)`,
//! `takeoff()` and, in the gear scenarios, `retractGear()`. The aircraft
//! starts at altitude −1 by default (on the ground means altitude < 0). `takeoff()`
//! does nothing until speed is within one acceleration step of
//! `takeOffSpeed`, then spools the engines up to exactly `takeOffSpeed`, and
//! on the following call lifts off to `groundAlt + climb_step`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{ConcreteTrace, EventKind, FieldMap, Scalar, SymbolTable, TraceEvent};
use crate::symbols;

pub const FIELDS: [&str; 6] = [
    "gear",
    "speed",
    "takeOffSpeed",
    "altitude",
    "groundAlt",
    "safeAltForGearRetract",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioName {
    Takeoff,
    TakeoffWithGear,
    FullFlight,
    BuggyTakeoff,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 4] = [
        ScenarioName::Takeoff,
        ScenarioName::TakeoffWithGear,
        ScenarioName::FullFlight,
        ScenarioName::BuggyTakeoff,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::Takeoff => "takeoff",
            ScenarioName::TakeoffWithGear => "takeoff_with_gear",
            ScenarioName::FullFlight => "full_flight",
            ScenarioName::BuggyTakeoff => "buggy_takeoff",
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::Scenario(format!("unknown scenario `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlightParams {
    pub take_off_speed: f64,
    pub ground_alt: f64,
    pub initial_altitude: f64,
    pub safe_alt_for_gear_retract: f64,
    pub accel_step: f64,
    pub climb_step: f64,
    pub ticks: u32,
}

impl Default for FlightParams {
    fn default() -> Self {
        FlightParams {
            take_off_speed: 60.0,
            ground_alt: 0.0,
            initial_altitude: -1.0,
            safe_alt_for_gear_retract: 100.0,
            accel_step: 10.0,
            climb_step: 25.0,
            ticks: 40,
        }
    }
}

impl FlightParams {
    /// Sets a parameter by its `--param` key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = || {
            value
                .parse::<f64>()
                .map_err(|_| Error::Scenario(format!("`{key}={value}`: not a number")))
        };
        match key {
            "takeOffSpeed" => self.take_off_speed = num()?,
            "groundAlt" => self.ground_alt = num()?,
            "initial_altitude" => self.initial_altitude = num()?,
            "safeAltForGearRetract" => self.safe_alt_for_gear_retract = num()?,
            "accel_step" => self.accel_step = num()?,
            "climb_step" => self.climb_step = num()?,
            "ticks" => {
                self.ticks = value
                    .parse()
                    .map_err(|_| Error::Scenario(format!("`ticks={value}`: not a count")))?
            }
            other => return Err(Error::Scenario(format!("unknown parameter `{other}`"))),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("takeOffSpeed", self.take_off_speed),
            ("safeAltForGearRetract", self.safe_alt_for_gear_retract),
            ("accel_step", self.accel_step),
            ("climb_step", self.climb_step),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(Error::Scenario(format!("`{name}` must be positive")));
        }
        if self.ticks == 0 {
            return Err(Error::Scenario("`ticks` must be at least 1".into()));
        }
        for (name, v) in [("groundAlt", self.ground_alt), ("initial_altitude", self.initial_altitude)] {
            if !v.is_finite() {
                return Err(Error::Scenario(format!("`{name}` must be finite")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlightScenario {
    pub name: ScenarioName,
    pub params: FlightParams,
    /// Reserved; every scenario is deterministic.
    pub seed: u64,
}

impl FlightScenario {
    pub fn new(name: ScenarioName) -> Self {
        FlightScenario {
            name,
            params: FlightParams::default(),
            seed: 0,
        }
    }
}

struct Plane {
    gear: i64,
    speed: f64,
    take_off_speed: f64,
    altitude: f64,
    ground_alt: f64,
    safe_alt: f64,
}

impl Plane {
    fn vars(&self) -> FieldMap {
        [
            ("gear", Scalar::Int(self.gear)),
            ("speed", Scalar::Float(self.speed)),
            ("takeOffSpeed", Scalar::Float(self.take_off_speed)),
            ("altitude", Scalar::Float(self.altitude)),
            ("groundAlt", Scalar::Float(self.ground_alt)),
            ("safeAltForGearRetract", Scalar::Float(self.safe_alt)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    fn on_ground(&self) -> bool {
        self.altitude < 0.0
    }
}

struct Recorder {
    events: Vec<TraceEvent>,
    open: Vec<String>,
    seq: u64,
}

impl Recorder {
    fn enter(&mut self, plane: &Plane, function: &str, args: &[(&str, serde_json::Value)]) {
        self.seq += 1;
        self.events.push(TraceEvent {
            seq: self.seq,
            kind: EventKind::Enter,
            function: function.to_string(),
            depth: self.open.len() as u32,
            vars: plane.vars(),
            args: args.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        });
        self.open.push(function.to_string());
    }

    fn exit(&mut self, plane: &Plane) {
        let function = self.open.pop().expect("exit pairs with an enter");
        self.seq += 1;
        self.events.push(TraceEvent {
            seq: self.seq,
            kind: EventKind::Exit,
            function,
            depth: self.open.len() as u32,
            vars: plane.vars(),
            args: Default::default(),
        });
    }

    fn call(&mut self, plane: &mut Plane, function: &str, args: &[(&str, serde_json::Value)], body: impl FnOnce(&mut Plane, &mut Recorder)) {
        self.enter(plane, function, args);
        body(plane, self);
        self.exit(plane);
    }
}

fn read_sensors(plane: &mut Plane, rec: &mut Recorder) {
    rec.call(plane, "readSensors", &[], |p, r| {
        r.call(p, "readAltimeter", &[], |_, _| {});
        r.call(p, "readAirspeed", &[], |_, _| {});
    });
}

/// Runs a scenario and returns its trace, with the scenario name as id.
pub fn run_scenario(s: &FlightScenario) -> Result<ConcreteTrace> {
    let p = &s.params;
    p.validate()?;
    let mut plane = Plane {
        gear: 0,
        speed: 0.0,
        take_off_speed: p.take_off_speed,
        altitude: p.initial_altitude,
        ground_alt: p.ground_alt,
        safe_alt: p.safe_alt_for_gear_retract,
    };
    let mut rec = Recorder {
        events: Vec::new(),
        open: Vec::new(),
        seq: 0,
    };
    let with_gear = s.name != ScenarioName::Takeoff;
    let (accel, climb) = (p.accel_step, p.climb_step);
    let liftoff_alt = p.ground_alt.max(0.0) + climb;

    let mut tick = 0;
    let mut gear_up_at = None;
    while tick < p.ticks {
        tick += 1;
        let buggy = s.name == ScenarioName::BuggyTakeoff;
        rec.call(&mut plane, "tick", &[("n", tick.into())], |pl, r| {
            read_sensors(pl, r);
            r.call(pl, "accelerate", &[("step", accel.into())], |pl, _| pl.speed += accel);
            r.call(pl, "takeoff", &[], |pl, _| {
                if pl.on_ground() {
                    if pl.speed >= pl.take_off_speed {
                        pl.altitude = liftoff_alt;
                    } else if pl.speed + accel >= pl.take_off_speed {
                        pl.speed = pl.take_off_speed;
                    }
                } else {
                    pl.altitude += climb;
                }
            });
            if with_gear {
                r.call(pl, "retractGear", &[], |pl, _| {
                    // The faulty variant only checks that the aircraft is airborne.
                    let threshold = if buggy { pl.ground_alt } else { pl.safe_alt };
                    if pl.gear == 0 && !pl.on_ground() && pl.altitude > threshold {
                        pl.gear = 1;
                    }
                });
            }
        });
        if !plane.on_ground() && s.name == ScenarioName::Takeoff {
            break;
        }
        if plane.gear == 1 && gear_up_at.is_none() {
            gear_up_at = Some(tick);
            if s.name != ScenarioName::FullFlight {
                break;
            }
        }
        if gear_up_at.is_some() && s.name == ScenarioName::FullFlight {
            break;
        }
    }

    if s.name == ScenarioName::FullFlight {
        let cruise_alt = 2.0 * p.safe_alt_for_gear_retract;
        while tick < p.ticks {
            tick += 1;
            rec.call(&mut plane, "tick", &[("n", tick.into())], |pl, r| {
                read_sensors(pl, r);
                r.call(pl, "climb", &[], |pl, _| {
                    if pl.altitude < cruise_alt {
                        pl.altitude = (pl.altitude + climb).min(cruise_alt);
                    }
                });
                r.call(pl, "trimThrottle", &[], |pl, _| pl.speed += 1.0);
            });
        }
    }

    Ok(ConcreteTrace {
        id: s.name.as_str().to_string(),
        events: rec.events,
        monitored_fields: FIELDS.iter().map(|s| s.to_string()).collect(),
    })
}

/// C source of the simulated program, used to derive the demo manifest.
pub const AUTOPILOT_SOURCE: &str = r#"/* autopilot.c: the program the flight demo simulates */
#include "autopilot.h"

#define CLIMB_STEP 25
#define ACCEL_STEP 10

int gear = 0;
float speed = 0;
float takeOffSpeed = 60;
float altitude = -1;
float groundAlt = 0;
float safeAltForGearRetract = 100;

static int onGround(void) { return altitude < 0; }

void readAltimeter(void) {}

void readAirspeed(void) {}

void readSensors(void) {
    readAltimeter();
    readAirspeed();
}

void accelerate(float step) {
    speed += step;
}

void takeoff(void) {
    if (onGround()) {
        if (speed >= takeOffSpeed) {
            altitude = groundAlt + CLIMB_STEP;
        } else if (speed + ACCEL_STEP >= takeOffSpeed) {
            speed = takeOffSpeed;
        }
    } else {
        altitude += CLIMB_STEP;
    }
}

void retractGear(void) {
    if (gear == 0 && !onGround() && altitude > safeAltForGearRetract) {
        gear = 1;
    }
}

void climb(void) {
    if (altitude < 2 * safeAltForGearRetract) {
        altitude += CLIMB_STEP;
    }
}

void trimThrottle(void) {
    speed += 1;
}

void tick(int n) {
    readSensors();
    accelerate(ACCEL_STEP);
    takeoff();
    retractGear();
}
"#;

/// Symbols of the simulated program.
pub fn symbol_manifest() -> SymbolTable {
    symbols::scan_text("autopilot.c", AUTOPILOT_SOURCE).symbols
}
