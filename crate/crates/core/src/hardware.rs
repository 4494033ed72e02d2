//! Throughput and capacity arithmetic for the time-multiplexed hardware,
//! and the static multiplier schedule of the physical neuron.

use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HardwareParams {
    pub clk_hz: f64,
    pub cycles_per_slot: u32,
    /// Logic available for physical hidden neurons, and the cost of one.
    pub alm_total: u64,
    pub alm_per_layer: u64,
    pub sram_bits: u64,
    pub ddr_bits_per_cycle: u32,
    pub ddr_efficiency: f64,
    pub ddr_count: u32,
    pub qdr_bits_per_cycle: u32,
    pub qdr_count: u32,
    /// Decoding-weight storage per neuron: 10 weights × 6 bits.
    pub bits_per_neuron: u32,
    pub neurons_per_layer: u64,
    /// Digits per second one time-multiplexed layer sustains.
    pub layer_digits_per_second: f64,
    pub max_layers: u32,
}

impl HardwareParams {
    /// Terasic DE5 (Stratix V) at 266 MHz.
    pub fn de5() -> Self {
        HardwareParams {
            clk_hz: 266e6,
            cycles_per_slot: 4,
            alm_total: 230_000,
            alm_per_layer: 1_600,
            sram_bits: 52 << 20,
            ddr_bits_per_cycle: 512,
            ddr_efficiency: 0.7,
            ddr_count: 2,
            qdr_bits_per_cycle: 72,
            qdr_count: 4,
            bits_per_neuron: 60,
            neurons_per_layer: 64 << 10,
            layer_digits_per_second: 64_000.0,
            max_layers: 80,
        }
    }
}

/// Latency of one digit through `n_neurons` time slots.
pub fn time_per_digit(hw: &HardwareParams, n_neurons: u64) -> f64 {
    n_neurons as f64 * f64::from(hw.cycles_per_slot) / hw.clk_hz
}

/// Digits per second one layer sustains when each digit occupies
/// `n_used` of its time slots: the layer finishes `1 / latency` digits per
/// second per digit stream, and fits `neurons_per_layer / n_used` streams.
pub fn layer_throughput(hw: &HardwareParams, n_used: u64) -> f64 {
    if n_used == 0 {
        return 0.0;
    }
    let streams = hw.neurons_per_layer as f64 / n_used as f64;
    streams / time_per_digit(hw, n_used)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CapacityPlan {
    pub max_physical_neurons: u64,
    pub onchip_layers: u64,
    pub external_layers: u64,
    pub total_layers: u64,
    pub digits_per_second: f64,
}

pub fn capacity_plan(hw: &HardwareParams) -> CapacityPlan {
    let max_physical_neurons = hw.alm_total / hw.alm_per_layer.max(1);
    let layer_bits = hw.neurons_per_layer * u64::from(hw.bits_per_neuron);
    let onchip_layers = if layer_bits == 0 { 0 } else { hw.sram_bits / layer_bits };
    let bits_per_slot = (f64::from(hw.ddr_bits_per_cycle) * f64::from(hw.ddr_count) * hw.ddr_efficiency
        + f64::from(hw.qdr_bits_per_cycle) * f64::from(hw.qdr_count))
        * f64::from(hw.cycles_per_slot);
    // 4019.2 / 60 = 66.99 rounds to the 67 external layers of the DE5 plan.
    let external_layers = (bits_per_slot / f64::from(hw.bits_per_neuron)).round() as u64;
    let total_layers = (onchip_layers + external_layers)
        .min(max_physical_neurons)
        .min(u64::from(hw.max_layers));
    CapacityPlan {
        max_physical_neurons,
        onchip_layers,
        external_layers,
        total_layers,
        digits_per_second: total_layers as f64 * hw.layer_digits_per_second,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "op", content = "weight", rename_all = "kebab-case")]
pub enum MultiplierOp {
    /// `F_rate = N_index × T`, scaled into 7 bits.
    ComputeRate,
    /// Hold `F_rate` on input A for the following cycles.
    LatchRate,
    /// `F_rate × decoding weight[i]`.
    MultiplyWeight(u8),
}

impl MultiplierOp {
    pub fn is_multiply(self) -> bool {
        !matches!(self, MultiplierOp::LatchRate)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ScheduleEntry {
    pub multiplier: u8,
    pub cycle: u8,
    pub op: MultiplierOp,
}

/// Three 9-bit multipliers over one four-cycle time slot.
pub fn multiplier_schedule() -> Vec<ScheduleEntry> {
    use MultiplierOp::*;
    let table = [
        [ComputeRate, LatchRate, MultiplyWeight(0), MultiplyWeight(1)],
        [MultiplyWeight(2), MultiplyWeight(3), MultiplyWeight(4), MultiplyWeight(5)],
        [MultiplyWeight(6), MultiplyWeight(7), MultiplyWeight(8), MultiplyWeight(9)],
    ];
    table
        .iter()
        .enumerate()
        .flat_map(|(m, ops)| {
            ops.iter().enumerate().map(move |(c, &op)| ScheduleEntry {
                multiplier: m as u8,
                cycle: c as u8,
                op,
            })
        })
        .collect()
}
