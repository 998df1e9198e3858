# Paquete src de gap_green: asintótica de funciones de Green en gaps espectrales
