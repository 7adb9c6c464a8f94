//! Class ids shared by semantic images, BEV maps and objects.

pub const BACKGROUND: u32 = 0;
pub const ROAD: u32 = 1;
pub const VEHICLE: u32 = 2;
pub const PEDESTRIAN: u32 = 3;
pub const CYCLIST: u32 = 4;
pub const TRAFFIC_SIGN: u32 = 5;

/// Number of class ids, background included.
pub const CLASS_COUNT: u32 = 6;

pub const OBJECT_CLASSES: [u32; 4] = [VEHICLE, PEDESTRIAN, CYCLIST, TRAFFIC_SIGN];

pub fn name(class_id: u32) -> &'static str {
    match class_id {
        BACKGROUND => "background",
        ROAD => "road",
        VEHICLE => "vehicle",
        PEDESTRIAN => "pedestrian",
        CYCLIST => "cyclist",
        TRAFFIC_SIGN => "traffic-sign",
        _ => "unknown",
    }
}

pub fn from_name(name: &str) -> Option<u32> {
    (0..CLASS_COUNT).find(|&c| self::name(c) == name)
}
