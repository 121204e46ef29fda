"""Micro-simulation of driver-vehicle agents driven by behavior trees and Frenet-frame trajectory planning."""

__version__ = "0.1.0"
