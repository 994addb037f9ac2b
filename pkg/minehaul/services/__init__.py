"""Services package for minehaul.

One module per functional concern: map and route construction, truck
dynamics and sensors, the scripted expert and traffic, data collection and
filtering, the FusionPlanner with its objectives and training loop,
uncertainty-aware deployment, and the MiningNav benchmark with its reports.
"""
