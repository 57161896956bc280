#pragma once

#include "authex/behavior.hpp"

namespace authex::apps {

// Registers the bundled example behaviors with the global registry:
//
//   flo_sensor     inputs Sensor:0, Tick:1; output Flooded:2.
//                  init: SATURATED(2) || MAX(2). Arms on a moisture reading
//                  >= SATURATED, then raises Flooded after MAX consecutive
//                  armed ticks.
//   flo_actuator   inputs Alert:0, Alert2:1; output Tap:2. Any alert shuts
//                  the tap (emits 0x00).
//   agg_sensor     input Sensor:0; output Moisture:1 (forwards readings).
//   agg            inputs Moisture:0, Moisture2:1; output MoistChanged:2
//                  (emits the average of the latest readings).
//   agg_display    input MoistChanged:0; output Display:1 (forwards).
//   temp_sensor    input Reading:0; output Temp:1 (forwards readings).
//   thermostat     input SetHeating:0; output Led:1 (forwards).
//   light_switch   input SetLights:0; output Led:1 (forwards).
//   gateway        inputs Temp:0, Command:1; outputs Heating:2, Lights:3,
//                  Status:4. init: LOW(2) || HIGH(2). Heating on below LOW,
//                  off above HIGH; commands forwarded to the lights.
//   web            handler UserCommand:0; input Status:1; output Command:2.
//                  Requests forward the command and return the last status.
//   echo           handler Echo:0; replies with the request payload.
//   attestation_manager   no I/O; sealed user entries (see attman.hpp).
void register_std_behaviors();

}  // namespace authex::apps
