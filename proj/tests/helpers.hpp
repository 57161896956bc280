#pragma once

#include <string>

#include "authex/deploy.hpp"
#include "authex/harness.hpp"

namespace testutil {

using namespace authex;

// Flood-detection app on three mixed-flavor nodes: two sensor nodes with a
// moisture sensor and a clock each, one actuator node driving the tap.
inline deploy::Descriptor flo_descriptor() {
  const char* text = R"({
    "nodes": [
      {"name": "ns1", "address": "mem://ns1", "flavor": "sancus",
       "extra": {"devices": "S1:input,T1:input"}},
      {"name": "ns2", "address": "mem://ns2", "flavor": "trustzone",
       "extra": {"devices": "S2:input,T2:input"}},
      {"name": "na", "address": "mem://na", "flavor": "sgx-sim",
       "extra": {"devices": "A:output"}}
    ],
    "modules": [
      {"name": "flos1", "node": "ns1", "behavior": "flo_sensor", "vendor_id": 1,
       "inputs": {"Sensor": 0, "Tick": 1}, "outputs": {"Flooded": 2},
       "init": "00460003"},
      {"name": "flos2", "node": "ns2", "behavior": "flo_sensor", "vendor_id": 1,
       "inputs": {"Sensor": 0, "Tick": 1}, "outputs": {"Flooded": 2},
       "init": "00460003"},
      {"name": "floa", "node": "na", "behavior": "flo_actuator", "vendor_id": 1,
       "inputs": {"Alert": 0, "Alert2": 1}, "outputs": {"Tap": 2}}
    ],
    "connections": [
      {"name": "s1", "from": "device:S1", "to": "flos1.Sensor", "exclusive": false},
      {"name": "t1", "from": "device:T1", "to": "flos1.Tick", "exclusive": false},
      {"name": "s2", "from": "device:S2", "to": "flos2.Sensor", "exclusive": false},
      {"name": "t2", "from": "device:T2", "to": "flos2.Tick", "exclusive": false},
      {"name": "alert1", "from": "flos1.Flooded", "to": "floa.Alert"},
      {"name": "alert2", "from": "flos2.Flooded", "to": "floa.Alert2"},
      {"name": "tap", "from": "floa.Tap", "to": "device:A"}
    ]
  })";
  return deploy::Descriptor::parse(text);
}

// Smart-home app: web front end (sgx-sim), gateway logic (trustzone), and a
// device node with the temperature sensor and two indicator LEDs.
inline deploy::Descriptor smart_home_descriptor() {
  const char* text = R"({
    "nodes": [
      {"name": "nw", "address": "mem://nw", "flavor": "sgx-sim"},
      {"name": "ng", "address": "mem://ng", "flavor": "trustzone"},
      {"name": "nd", "address": "mem://nd", "flavor": "sancus",
       "extra": {"devices": "TS:input,HLED:output,LLED:output"}}
    ],
    "modules": [
      {"name": "web", "node": "nw", "behavior": "web", "vendor_id": 2,
       "handlers": {"UserCommand": 0}, "inputs": {"Status": 1}, "outputs": {"Command": 2}},
      {"name": "gateway", "node": "ng", "behavior": "gateway", "vendor_id": 2,
       "inputs": {"Temp": 0, "Command": 1},
       "outputs": {"Heating": 2, "Lights": 3, "Status": 4},
       "init": "00120019"},
      {"name": "temp_sensor", "node": "nd", "behavior": "temp_sensor", "vendor_id": 2,
       "inputs": {"Reading": 0}, "outputs": {"Temp": 1}},
      {"name": "thermostat", "node": "nd", "behavior": "thermostat", "vendor_id": 2,
       "inputs": {"SetHeating": 0}, "outputs": {"Led": 1}},
      {"name": "light_switch", "node": "nd", "behavior": "light_switch", "vendor_id": 2,
       "inputs": {"SetLights": 0}, "outputs": {"Led": 1}}
    ],
    "connections": [
      {"name": "reading", "from": "device:TS", "to": "temp_sensor.Reading", "exclusive": false},
      {"name": "temp", "from": "temp_sensor.Temp", "to": "gateway.Temp"},
      {"name": "heat", "from": "gateway.Heating", "to": "thermostat.SetHeating"},
      {"name": "lights", "from": "gateway.Lights", "to": "light_switch.SetLights"},
      {"name": "status", "from": "gateway.Status", "to": "web.Status"},
      {"name": "command", "from": "web.Command", "to": "gateway.Command"},
      {"name": "hled", "from": "thermostat.Led", "to": "device:HLED"},
      {"name": "lled", "from": "light_switch.Led", "to": "device:LLED"},
      {"name": "user", "from": "deployer", "to": "web.UserCommand", "direct": true}
    ]
  })";
  return deploy::Descriptor::parse(text);
}

inline authex::Bytes u16be(uint16_t v) {
  authex::Bytes b;
  authex::put_u16(b, v);
  return b;
}

// Saturating moisture on S1 followed by enough ticks trips the tap.
inline std::vector<harness::Stimulus> flo_flood_schedule() {
  using harness::Stimulus;
  return {
      {Stimulus::Kind::device, "S1", u16be(80)},
      {Stimulus::Kind::device, "T1", u16be(0)},
      {Stimulus::Kind::device, "T1", u16be(0)},
      {Stimulus::Kind::device, "T1", u16be(0)},
  };
}

inline std::vector<harness::Stimulus> smart_home_schedule() {
  using harness::Stimulus;
  return {
      {Stimulus::Kind::device, "TS", u16be(15)},   // cold: heating on
      {Stimulus::Kind::direct, "user", {0x01}},    // lights on
      {Stimulus::Kind::device, "TS", u16be(30)},   // hot: heating off
      {Stimulus::Kind::direct, "user", {0x00}},    // lights off
  };
}

}  // namespace testutil
