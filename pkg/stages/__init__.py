"""Pipeline stages from raw accelerometer recordings to fatigue estimates."""
